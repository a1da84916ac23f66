//! The five stages behind the command line: gen, forward, verify, recover
//! and report. Stages talk through files only. Artifacts (manifold, regions,
//! spectral cache, Λ archives) live in the artifact directory, which is
//! `$GEOWAVE_CACHE` when set and the output directory otherwise. Reports go
//! to the output directory. No report contains timings, so identical inputs
//! give identical bytes.

pub mod suites;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bcdata::{
    random_smooth_probes, weak_convergence_test, DataOracle, ProbeDictionary, RegChoice, RegionGeometry, SparseSource,
    DEFAULT_TAU_W,
};
use crate::config::RunConfig;
use crate::manifold::{DiscreteManifold, Region};
use crate::recon::{reconstruct_metric_space, true_boundary_distance, true_sigma, DistanceReport, ReconSettings, Reconstructor};
use crate::spectral::{decompose, read_cache, write_cache, SpectralDecomposition};
use crate::wave::{assemble_lambda, provenance, read_archive, write_archive, SourceToSolutionData, TimeGrid};
use crate::{Error, Result};

pub use suites::{ClusterCheck, SuiteResult};

pub const CACHE_ENV: &str = "GEOWAVE_CACHE";

/// Horizon of the long archive used only by the spectrum suite. Pole
/// separation needs a window well beyond T.
pub const SPECTRUM_HORIZON: f64 = 10.0;
/// Width of the Gaussian probe used by the spectrum suite.
pub const SPECTRUM_PROBE_WIDTH: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct RunPaths {
    pub artifacts: PathBuf,
    pub out: PathBuf,
}

impl RunPaths {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        let out = out.into();
        let artifacts = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| out.clone());
        RunPaths { artifacts, out }
    }

    pub fn with_artifacts(out: impl Into<PathBuf>, artifacts: impl Into<PathBuf>) -> Self {
        RunPaths { artifacts: artifacts.into(), out: out.into() }
    }

    pub fn manifold(&self) -> PathBuf {
        self.artifacts.join("manifold.txt")
    }
    pub fn regions(&self) -> PathBuf {
        self.artifacts.join("regions.txt")
    }
    pub fn spectral(&self) -> PathBuf {
        self.artifacts.join("spectral.bin")
    }
    pub fn lambda(&self) -> PathBuf {
        self.artifacts.join("lambda.bin")
    }
    pub fn lambda_spectrum(&self) -> PathBuf {
        self.artifacts.join("lambda_spectrum.bin")
    }
    pub fn verify(&self) -> PathBuf {
        self.out.join("verify.txt")
    }
    pub fn spectrum(&self) -> PathBuf {
        self.out.join("spectrum.txt")
    }
    pub fn pairing(&self) -> PathBuf {
        self.out.join("pairing.txt")
    }
    pub fn sigma(&self) -> PathBuf {
        self.out.join("sigma.txt")
    }
    pub fn distances(&self) -> PathBuf {
        self.out.join("distances.txt")
    }
    pub fn summary(&self) -> PathBuf {
        self.out.join("summary.txt")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn manifold_text(cfg: &RunConfig, m: &DiscreteManifold) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "geowave-manifold 1");
    let _ = writeln!(s, "kind {}", m.kind.tag());
    let _ = writeln!(s, "hash {}", m.hash());
    let _ = writeln!(s, "vertices {}", m.n_vertices());
    let _ = writeln!(s, "mesh_spacing {:.12e}", m.mesh_spacing_h);
    let spec = toml::to_string(&cfg.manifold).expect("manifold spec serializes");
    for line in spec.lines() {
        let _ = writeln!(s, "spec {line}");
    }
    s
}

/// The manifold from the config, checked against the one `gen` recorded.
fn load_manifold(cfg: &RunConfig, paths: &RunPaths) -> Result<DiscreteManifold> {
    let path = paths.manifold();
    let text = read_text(&path)?;
    let m = cfg.build_manifold()?;
    let recorded = text.lines().find_map(|l| l.strip_prefix("hash ")).map(str::trim);
    if recorded != Some(m.hash()) {
        return Err(Error::StaleArtifact { path, reason: "manifold differs from the configured one; rerun gen".into() });
    }
    Ok(m)
}

fn load_regions(m: &DiscreteManifold, paths: &RunPaths) -> Result<(Region, Region)> {
    let path = paths.regions();
    let text = read_text(&path)?;
    let (s, r) = text
        .split_once("[R]\n")
        .and_then(|(a, b)| Some((a.strip_prefix("[S]\n")?, b)))
        .ok_or_else(|| Error::Corrupted { path: path.clone(), reason: "missing [S] or [R] section".into() })?;
    let tag = |e: Error| match e {
        Error::StaleArtifact { reason, .. } => Error::StaleArtifact { path: path.clone(), reason },
        e => e,
    };
    Ok((Region::from_text(m, s).map_err(tag)?, Region::from_text(m, r).map_err(tag)?))
}

fn load_spectral(m: &DiscreteManifold, paths: &RunPaths) -> Result<SpectralDecomposition> {
    read_cache(paths.spectral(), Some(m.hash()))
}

fn time_grid(cfg: &RunConfig, horizon: f64, dec: &SpectralDecomposition) -> Result<TimeGrid> {
    TimeGrid::for_spectrum(horizon, dec.lambda_max(), cfg.time.dt_safety)
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: &'static str,
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Manifold descriptor, S and R, and the spectral cache.
pub fn gen(cfg: &RunConfig, paths: &RunPaths) -> Result<StageReport> {
    cfg.validate()?;
    let m = cfg.build_manifold()?;
    let s = cfg.s.build(&m)?;
    let r = cfg.r.build(&m)?;
    let dec = decompose(&m, cfg.n_modes())?;
    write_text(&paths.manifold(), &manifold_text(cfg, &m))?;
    write_text(&paths.regions(), &format!("[S]\n{}[R]\n{}", s.to_text(), r.to_text()))?;
    write_cache(&dec, paths.spectral())?;
    Ok(StageReport {
        stage: "gen",
        files: vec![paths.manifold(), paths.regions(), paths.spectral()],
        lines: vec![
            format!("manifold {} with {} vertices, hash {}", m.kind.tag(), m.n_vertices(), m.hash()),
            format!("|S| = {}, |R| = {}, modes = {}", s.len(), r.len(), dec.n_modes()),
        ],
    })
}

fn spectrum_enabled(cfg: &RunConfig) -> bool {
    cfg.tolerances.spectrum_clusters > 0
}

/// Λ archive over (0, 2T), plus the long archive for the spectrum suite.
pub fn forward(cfg: &RunConfig, paths: &RunPaths) -> Result<StageReport> {
    cfg.validate()?;
    let m = load_manifold(cfg, paths)?;
    let (s, r) = load_regions(&m, paths)?;
    let dec = load_spectral(&m, paths)?;
    if let Some(k) = cfg.n_modes() {
        if k != dec.n_modes() {
            return Err(Error::StaleArtifact {
                path: paths.spectral(),
                reason: format!("cache holds {} modes, config asks for {k}; rerun gen", dec.n_modes()),
            });
        }
    }
    let grid = time_grid(cfg, cfg.time.horizon, &dec)?;
    let data = assemble_lambda(&dec, &s, &r, grid)?;
    write_archive(&data, paths.lambda())?;
    let mut files = vec![paths.lambda()];
    let mut lines = vec![format!(
        "T = {}, dt = {:.6e}, n_steps = {}, basis columns = {}",
        grid.horizon,
        grid.dt,
        grid.n_steps,
        data.n_basis_columns()
    )];
    if spectrum_enabled(cfg) {
        let long = time_grid(cfg, SPECTRUM_HORIZON.max(cfg.time.horizon), &dec)?;
        write_archive(&assemble_lambda(&dec, &s, &r, long)?, paths.lambda_spectrum())?;
        files.push(paths.lambda_spectrum());
        lines.push(format!("spectrum archive: T = {}, n_steps = {}", long.horizon, long.n_steps));
    }
    Ok(StageReport { stage: "forward", files, lines })
}

fn load_archive(
    cfg: &RunConfig,
    path: PathBuf,
    horizon: f64,
    dec: &SpectralDecomposition,
    s: &Region,
    r: &Region,
) -> Result<SourceToSolutionData> {
    let grid = time_grid(cfg, horizon, dec)?;
    read_archive(path, Some(&provenance(dec, s, r, &grid)))
}

fn oracle_for(m: &DiscreteManifold, s: &Region, r: &Region, data: SourceToSolutionData) -> Result<DataOracle> {
    DataOracle::new(data, RegionGeometry::from_manifold(m, s), RegionGeometry::from_manifold(m, r))
}

/// f_l = f / l for a bump f on R: the sequence converges weakly to zero,
/// and its pairing curves are the plot data of the report.
fn pairing_decay(cfg: &RunConfig, oracle: &DataOracle) -> Result<(bool, String)> {
    let grid = oracle.grid();
    let nt = grid.horizon_node();
    let width = (nt / 8).max(3);
    let bump: Vec<(usize, usize, f64)> = (0..oracle.n_r())
        .flat_map(|k| {
            (1..width).map(move |j| {
                let x = j as f64 / width as f64;
                (nt - 2 - width + j, k, (std::f64::consts::PI * x).sin().powi(2))
            })
        })
        .collect();
    let seq: Vec<SparseSource> = (1..=16)
        .map(|l| SparseSource { entries: bump.iter().map(|&(i, k, v)| (i, k, v / l as f64)).collect() })
        .collect();
    let dict = ProbeDictionary {
        canonical: false,
        random: random_smooth_probes(&grid, grid.horizon, oracle.n_s(), 8, cfg.seed)?,
    };
    let bound = (cfg.time.radius_bound > 0.0).then_some(cfg.time.radius_bound);
    let rep = weak_convergence_test(oracle, &seq, &dict, grid.horizon, DEFAULT_TAU_W, bound)?;
    let mut out = String::from("# l");
    for p in 0..rep.random_pairings.first().map_or(0, Vec::len) {
        let _ = write!(out, " probe{p}");
    }
    out.push('\n');
    for (l, row) in rep.random_pairings.iter().enumerate() {
        let _ = write!(out, "{}", l + 1);
        for v in row {
            let _ = write!(out, " {v:.9e}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "[summary]\nconverges = {}", rep.converges);
    Ok((rep.converges, out))
}

fn suite_table(results: &[SuiteResult]) -> String {
    let mut s = String::from("# suite value tolerance status detail\n");
    for r in results {
        let _ = writeln!(
            s,
            "{} {:.6e} {:.6e} {} {}",
            r.name,
            r.value,
            r.tolerance,
            if r.passed { "pass" } else { "fail" },
            r.detail
        );
    }
    s
}

fn spectrum_table(checks: &[ClusterCheck]) -> String {
    let mut s = String::from("# cluster lambda_hat lambda multiplicity_hat multiplicity residue rel_error angle\n");
    for c in checks {
        let _ = writeln!(
            s,
            "{} {:.12e} {:.12e} {} {} {:.6e} {:.6e} {:.6e}",
            c.index, c.lambda_hat, c.lambda, c.multiplicity_hat, c.multiplicity, c.residue, c.rel_error, c.angle
        );
    }
    s
}

/// Identity suites against direct computation. Writes the table before
/// failing, so a failed run still leaves its evidence.
pub fn verify(cfg: &RunConfig, paths: &RunPaths) -> Result<(StageReport, Vec<SuiteResult>)> {
    cfg.validate()?;
    let m = load_manifold(cfg, paths)?;
    let (s, r) = load_regions(&m, paths)?;
    let dec = load_spectral(&m, paths)?;
    let data = load_archive(cfg, paths.lambda(), cfg.time.horizon, &dec, &s, &r)?;
    let grid = data.grid;
    let tol = &cfg.tolerances;
    let n = cfg.sampling.suite_pairs;
    let oracle = oracle_for(&m, &s, &r, data)?;
    let mut results = vec![
        suites::adjoint_suite(&dec, &s, &r, grid, n, cfg.seed, tol.adjoint)?,
        suites::blago_suite(&dec, &oracle, n, cfg.seed.wrapping_add(1), tol.blago)?,
        suites::modal_suite(&dec, &s, grid, cfg.sampling.modal_sources, cfg.seed.wrapping_add(2), tol.modal)?,
        suites::condition_c_suite(
            &dec,
            &s,
            (tol.condition_c_clusters > 0).then_some(tol.condition_c_clusters),
            tol.condition_c,
        )?,
    ];
    let (converges, pairing) = pairing_decay(cfg, &oracle)?;
    results.push(SuiteResult {
        name: "weak_convergence".into(),
        value: if converges { 0.0 } else { 1.0 },
        tolerance: 0.0,
        passed: converges,
        detail: "f_l = f/l on R against 8 smooth probes".into(),
    });
    let mut files = vec![paths.verify(), paths.pairing()];
    if spectrum_enabled(cfg) {
        let long = load_archive(cfg, paths.lambda_spectrum(), SPECTRUM_HORIZON.max(cfg.time.horizon), &dec, &s, &r)?;
        let long_oracle = oracle_for(&m, &s, &r, long)?;
        let (res, _, checks) = suites::spectrum_suite(
            &dec,
            &long_oracle,
            tol.spectrum_clusters,
            SPECTRUM_PROBE_WIDTH,
            tol.spectrum_lambda,
            tol.spectrum_angle,
        )?;
        results.push(res);
        results.push(audit_result(&long_oracle, "data_purity_spectrum"));
        write_text(&paths.spectrum(), &spectrum_table(&checks))?;
        files.push(paths.spectrum());
    }
    results.push(audit_result(&oracle, "data_purity"));
    write_text(&paths.verify(), &suite_table(&results))?;
    write_text(&paths.pairing(), &pairing)?;
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect();
    if !failed.is_empty() {
        return Err(Error::Verification(format!("failed suites: {}", failed.join(", "))));
    }
    let lines = results.iter().map(|r| format!("{:<20} {:.3e} (tol {:.1e}) pass", r.name, r.value, r.tolerance)).collect();
    Ok((StageReport { stage: "verify", files, lines }, results))
}

fn audit_result(oracle: &DataOracle, name: &str) -> SuiteResult {
    let audit = oracle.audit();
    SuiteResult {
        name: name.into(),
        value: audit.violations.len() as f64,
        tolerance: 0.0,
        passed: audit.passed(),
        detail: format!("{} access records", audit.records),
    }
}

fn verify_passed(paths: &RunPaths) -> Result<()> {
    let text = read_text(&paths.verify())?;
    let failed: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter(|l| l.split_whitespace().nth(3) != Some("pass"))
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(format!("verify reported failures ({}); recovery refused", failed.join(", "))))
    }
}

/// `count` evenly spaced entries of `items`; 0 keeps all.
pub fn spread<T: Copy>(items: &[T], count: usize) -> Vec<T> {
    if count == 0 || count >= items.len() {
        return items.to_vec();
    }
    (0..count).map(|k| items[k * items.len() / count]).collect()
}

#[derive(Clone, Debug)]
pub struct SigmaRow {
    /// Vertex id.
    pub y: usize,
    pub sigma: f64,
    pub truth: f64,
}

#[derive(Clone, Debug)]
pub struct Recovery {
    pub sigma: Vec<SigmaRow>,
    pub report: DistanceReport,
    pub upper_bounds: usize,
    pub sandwich_violations: usize,
    pub resolution: f64,
    pub audit_passed: bool,
}

impl Recovery {
    pub fn sigma_text(&self) -> String {
        let mut s = String::from("# y sigma_hat sigma_oracle abs_err\n");
        for r in &self.sigma {
            let _ = writeln!(s, "{} {:.6} {:.6} {:.6}", r.y, r.sigma, r.truth, (r.sigma - r.truth).abs());
        }
        let max = self.sigma.iter().map(|r| (r.sigma - r.truth).abs()).fold(0.0, f64::max);
        let _ = writeln!(s, "[summary]\nmax_error = {max:.6}");
        s
    }

    pub fn distance_text(&self) -> String {
        let mut s = self.report.to_text();
        let _ = writeln!(s, "upper_bounds = {}", self.upper_bounds);
        let _ = writeln!(s, "sandwich_violations = {}", self.sandwich_violations);
        let _ = writeln!(s, "data_purity = {}", if self.audit_passed { "pass" } else { "fail" });
        s
    }
}

/// σ̂ on the sampled boundary vertices, then the distance sweep over points
/// (y, s) with 4h ≤ s ≤ σ̂(y) − 2·band and z samples, scored against the geometry.
pub fn run_recovery(cfg: &RunConfig, m: &DiscreteManifold, r: &Region, oracle: &DataOracle) -> Result<Recovery> {
    let h = m.mesh_spacing_h;
    let horizon = cfg.time.horizon;
    let settings = ReconSettings {
        tau_inc: cfg.tolerances.inclusion,
        n_random: cfg.sampling.trial_sources,
        seed: cfg.seed,
        reg: RegChoice::Relative(cfg.tolerances.reg),
        ..ReconSettings::new(h)
    };
    let rec = Reconstructor::new(oracle, horizon, settings)?;
    let grid = rec.settings.grid(horizon);
    let ys = spread(&rec.boundary, cfg.sampling.y_samples);
    let zs = spread(&rec.boundary, cfg.sampling.z_samples);
    let mut sigma = Vec::new();
    let mut points = Vec::new();
    for &y in &ys {
        let est = rec.recover_sigma(y, &grid)?;
        let vy = r.vertices[y];
        sigma.push(SigmaRow { y: vy, sigma: est.sigma, truth: true_sigma(m, r, vy)? });
        let mut k = 0;
        loop {
            let s = (cfg.sampling.s_min_steps + k as f64 * cfg.sampling.s_step_steps) * h;
            // σ̂ is good to one band, and distance queries lose resolution
            // within a band of the cut locus, where the cap closes around x.
            if s > est.sigma - 2.0 * rec.settings.band() || s > horizon {
                break;
            }
            points.push((y, s));
            k += 1;
        }
    }
    let est = rec.distance_sweep(&points, &zs, &grid)?;
    let mut recovered = vec![vec![0.0; zs.len()]; points.len()];
    let mut truth = vec![vec![0.0; zs.len()]; points.len()];
    for (i, &(y, s)) in points.iter().enumerate() {
        for (j, &z) in zs.iter().enumerate() {
            recovered[i][j] = est[i * zs.len() + j].distance;
            truth[i][j] = true_boundary_distance(m, r, r.vertices[y], s, r.vertices[z])?;
        }
    }
    let ids: Vec<(usize, f64)> = points.iter().map(|&(y, s)| (r.vertices[y], s)).collect();
    let zids: Vec<usize> = zs.iter().map(|&z| r.vertices[z]).collect();
    let report = reconstruct_metric_space(&ids, &zids, &recovered, &truth, h, rec.settings.band());
    Ok(Recovery {
        sigma,
        report,
        upper_bounds: est.iter().filter(|e| e.upper_bound).count(),
        sandwich_violations: est.iter().filter(|e| !e.sandwich_ok).count(),
        resolution: h,
        audit_passed: oracle.audit().passed(),
    })
}

pub fn recover(cfg: &RunConfig, paths: &RunPaths) -> Result<(StageReport, Recovery)> {
    cfg.validate()?;
    if cfg.time.radius_bound > 0.0 && cfg.time.horizon <= cfg.time.radius_bound {
        return Err(Error::Config(format!(
            "T = {} does not exceed the radius bound {}: waves from S cannot reach every point, \
             so the pairings do not determine u(T); raise time.horizon",
            cfg.time.horizon, cfg.time.radius_bound
        )));
    }
    verify_passed(paths)?;
    let m = load_manifold(cfg, paths)?;
    let (s, r) = load_regions(&m, paths)?;
    let dec = load_spectral(&m, paths)?;
    let data = load_archive(cfg, paths.lambda(), cfg.time.horizon, &dec, &s, &r)?;
    let oracle = oracle_for(&m, &s, &r, data)?;
    let rec = run_recovery(cfg, &m, &r, &oracle).map_err(|e| match e {
        Error::Config(_) | Error::MissingArtifact(_) | Error::StaleArtifact { .. } | Error::Recovery(_) => e,
        e => Error::Recovery(e.to_string()),
    })?;
    write_text(&paths.sigma(), &rec.sigma_text())?;
    write_text(&paths.distances(), &rec.distance_text())?;
    let mut lines = vec![
        format!("points = {}, z samples = {}", rec.report.points.len(), rec.report.z_samples.len()),
        format!(
            "max error = {:.4}, hausdorff = {:.4}, band = {:.4}",
            rec.report.max_error, rec.report.hausdorff, rec.report.resolution_band
        ),
    ];
    lines.extend(rec.report.warnings.iter().map(|w| format!("warning: {w}")));
    if rec.upper_bounds > 0 {
        lines.push(format!("warning: {} distances hit the top of the t-grid", rec.upper_bounds));
    }
    Ok((StageReport { stage: "recover", files: vec![paths.sigma(), paths.distances()], lines }, rec))
}

fn summary_block(text: &str) -> Vec<(String, String)> {
    text.split_once("[summary]")
        .map(|(_, b)| {
            b.lines()
                .filter_map(|l| l.split_once(" = "))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect()
        })
        .unwrap_or_default()
}

fn table_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .take_while(|l| !l.starts_with("[summary]"))
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

/// One summary plus column files for plotting, from whatever the run
/// directory holds.
pub fn report(paths: &RunPaths) -> Result<StageReport> {
    let known = [
        paths.manifold(),
        paths.lambda(),
        paths.verify(),
        paths.spectrum(),
        paths.pairing(),
        paths.sigma(),
        paths.distances(),
    ];
    if !known.iter().any(|p| p.exists()) {
        return Err(Error::Config(format!("{} holds no run outputs", paths.out.display())));
    }
    let mut sum = String::from("geowave run summary\n");
    let stage = |name: &str, present: bool, sum: &mut String| {
        let _ = writeln!(sum, "stage {name}: {}", if present { "present" } else { "missing" });
    };
    stage("gen", paths.manifold().exists() && paths.regions().exists() && paths.spectral().exists(), &mut sum);
    stage("forward", paths.lambda().exists(), &mut sum);
    stage("verify", paths.verify().exists(), &mut sum);
    stage("recover", paths.distances().exists(), &mut sum);
    let mut files = vec![paths.summary()];

    if let Ok(text) = read_text(&paths.verify()) {
        let _ = writeln!(sum, "\n[verify]");
        for row in table_rows(&text) {
            if row.len() >= 4 {
                let _ = writeln!(sum, "{} = {} ({} vs {})", row[0], row[3], row[1], row[2]);
            }
        }
    }
    if let Ok(text) = read_text(&paths.spectrum()) {
        let mut dat = String::from("# lambda lambda_hat rel_error\n");
        for row in table_rows(&text) {
            let _ = writeln!(dat, "{} {} {}", row[2], row[1], row[6]);
        }
        let path = paths.out.join("eigenvalues.dat");
        write_text(&path, &dat)?;
        files.push(path);
    }
    if let Ok(text) = read_text(&paths.pairing()) {
        let dat: String = text.lines().take_while(|l| !l.starts_with("[summary]")).map(|l| format!("{l}\n")).collect();
        let path = paths.out.join("pairing_decay.dat");
        write_text(&path, &dat)?;
        files.push(path);
    }
    if let Ok(text) = read_text(&paths.sigma()) {
        let _ = writeln!(sum, "\n[sigma]");
        for (k, v) in summary_block(&text) {
            let _ = writeln!(sum, "{k} = {v}");
        }
    }
    if let Ok(text) = read_text(&paths.distances()) {
        let _ = writeln!(sum, "\n[distances]");
        let block = summary_block(&text);
        for (k, v) in &block {
            let _ = writeln!(sum, "{k} = {v}");
        }
        let band: f64 = block.iter().find(|(k, _)| k == "resolution_band").and_then(|(_, v)| v.parse().ok()).unwrap_or(0.0);
        let errs: Vec<f64> = table_rows(&text).iter().filter_map(|r| r.get(5)?.parse().ok()).collect();
        let path = paths.out.join("distance_errors.dat");
        write_text(&path, &histogram(&errs, band))?;
        files.push(path);
    }
    write_text(&paths.summary(), &sum)?;
    Ok(StageReport { stage: "report", files, lines: sum.lines().map(str::to_string).collect() })
}

/// Absolute errors in 16 bins up to twice the resolution band, with one
/// overflow bin.
fn histogram(errs: &[f64], band: f64) -> String {
    let top = if band > 0.0 { 2.0 * band } else { errs.iter().copied().fold(0.0, f64::max).max(1e-12) };
    let bins = 16;
    let mut counts = vec![0usize; bins + 1];
    for &e in errs {
        let k = ((e / top) * bins as f64).floor() as usize;
        counts[k.min(bins)] += 1;
    }
    let mut s = String::from("# bin_low bin_high count\n");
    for (k, c) in counts.iter().enumerate() {
        let lo = top * k as f64 / bins as f64;
        let hi = if k == bins { f64::INFINITY } else { top * (k + 1) as f64 / bins as f64 };
        let _ = writeln!(s, "{lo:.6} {hi:.6} {c}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_picks_evenly() {
        assert_eq!(spread(&[1, 2, 3, 4, 5, 6], 3), vec![1, 3, 5]);
        assert_eq!(spread(&[1, 2], 0), vec![1, 2]);
        assert_eq!(spread(&[1, 2], 5), vec![1, 2]);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.1, 0.45, 10.0], 0.25);
        let total: usize = h.lines().skip(1).map(|l| l.split_whitespace().nth(2).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 4);
        assert!(h.lines().last().unwrap().ends_with(" 1"));
    }
}
