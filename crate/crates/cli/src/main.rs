use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geowave::config::RunConfig;
use geowave::pipeline::{self, RunPaths, StageReport};
use geowave::{Error, Result};

/// Wave data on a discrete manifold: simulate, verify, recover distances.
#[derive(Parser)]
#[command(name = "geowave", version)]
struct Cli {
    /// Print the default configuration and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the manifold, S, R and the spectral cache.
    Gen(Common),
    /// Assemble the Λ archive.
    Forward(Common),
    /// Run the identity suites against the archive.
    Verify(Common),
    /// Recover σ and boundary distances from the archive.
    Recover(Common),
    /// Summarize a run directory.
    Report {
        /// Run directory; defaults to --out or the configured one.
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    dt_safety: Option<f64>,
    #[arg(long)]
    print_defaults: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(modes) = self.modes {
            cfg.time.modes = modes;
        }
        if let Some(s) = self.dt_safety {
            cfg.time.dt_safety = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print(report: &StageReport) {
    for line in &report.lines {
        println!("{}: {line}", report.stage);
    }
    for f in &report.files {
        println!("{}: wrote {}", report.stage, f.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let Some(command) = cli.command else {
        if cli.print_defaults {
            print!("{}", RunConfig::default().to_toml());
            return Ok(());
        }
        return Err(Error::Config("no subcommand given; see --help".into()));
    };
    let common = match &command {
        Command::Gen(c) | Command::Forward(c) | Command::Verify(c) | Command::Recover(c) => c,
        Command::Report { common, .. } => common,
    };
    if cli.print_defaults || common.print_defaults {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }
    if common.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", common.jobs)))?;
    }
    if let Command::Report { dir, common } = &command {
        let out = match (dir, &common.out, &common.config) {
            (Some(d), _, _) => d.clone(),
            (None, Some(o), _) => o.clone(),
            (None, None, _) => common.config()?.out,
        };
        print(&pipeline::report(&RunPaths::new(out))?);
        return Ok(());
    }
    let cfg = common.config()?;
    let paths = RunPaths::new(&cfg.out);
    match command {
        Command::Gen(_) => print(&pipeline::gen(&cfg, &paths)?),
        Command::Forward(_) => print(&pipeline::forward(&cfg, &paths)?),
        Command::Verify(_) => print(&pipeline::verify(&cfg, &paths)?.0),
        Command::Recover(_) => print(&pipeline::recover(&cfg, &paths)?.0),
        Command::Report { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("geowave: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
