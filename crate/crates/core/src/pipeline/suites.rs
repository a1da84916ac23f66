//! Identity checks run by `verify`. Each compares a data-side quantity with
//! a direct computation on the manifold.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bcdata::{blago_pair, recover_spectrum, DataOracle, Probe, RecoveredSpectrum, SpectrumOptions};
use crate::linalg::{max_principal_angle, weighted_orthonormalize};
use crate::manifold::Region;
use crate::spectral::{condition_c_audit, SpectralDecomposition};
use crate::wave::{assemble_lambda, modal_coefficients, solve, Signal, Source, TimeGrid};
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    /// Worst observed value of the suite's error measure.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn below(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        SuiteResult { name: name.into(), value, tolerance, passed: value <= tolerance, detail }
    }
}

/// Gaussian values on the nodes 2..=last, zero elsewhere.
pub fn random_source(region: &Region, grid: TimeGrid, last: usize, rng: &mut ChaCha8Rng) -> Source {
    let mut values = DMatrix::zeros(grid.n_nodes(), region.len());
    for i in 2..=last.min(grid.n_steps - 2) {
        for k in 0..region.len() {
            values[(i, k)] = rng.sample(StandardNormal);
        }
    }
    Signal::new(region, grid, values).expect("shape matches")
}

fn l2(x: &Signal, mass: &[f64]) -> f64 {
    x.dot(x, mass).sqrt()
}

/// Values of `x` on the nodes 0..=nt, zero after.
fn truncate(x: &Signal, nt: usize) -> Signal {
    let mut out = x.clone();
    for i in nt + 1..out.values.nrows() {
        out.values.row_mut(i).fill(0.0);
    }
    out
}

/// (Λ_{S,R} f, h) against (f, R Λ_{R,S} R h) on (0, T), relative to
/// ‖Λ_{S,R} f‖·‖h‖.
pub fn adjoint_suite(
    dec: &SpectralDecomposition,
    s: &Region,
    r: &Region,
    grid: TimeGrid,
    pairs: usize,
    seed: u64,
    tolerance: f64,
) -> Result<SuiteResult> {
    let forward = assemble_lambda(dec, s, r, grid)?;
    let backward = assemble_lambda(dec, r, s, grid)?;
    let nt = grid.horizon_node();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let f = random_source(s, grid, nt - 2, &mut rng);
        let h = random_source(r, grid, nt - 2, &mut rng);
        let lf = truncate(&forward.apply(&f)?, nt);
        let lhs = lf.dot(&h, &forward.r_mass);
        let rh = reverse(&h, nt);
        let back = reverse(&truncate(&backward.apply(&rh)?, nt), nt);
        let rhs = f.dot(&back, &forward.s_mass);
        let scale = l2(&lf, &forward.r_mass) * l2(&h, &forward.r_mass);
        worst = worst.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
    }
    Ok(SuiteResult::below("adjoint", worst, tolerance, format!("{pairs} pairs")))
}

fn reverse(x: &Signal, nt: usize) -> Signal {
    let mut out = x.clone();
    out.values.fill(0.0);
    for i in 0..=nt {
        out.values.set_row(i, &x.values.row(nt - i));
    }
    out
}

/// Data-side pairing against ⟨u^f(T), u^h(T)⟩ from modal coefficients,
/// relative to ‖u^f(T)‖·‖u^h(T)‖.
pub fn blago_suite(
    dec: &SpectralDecomposition,
    oracle: &DataOracle,
    pairs: usize,
    seed: u64,
    tolerance: f64,
) -> Result<SuiteResult> {
    let grid = oracle.grid();
    let nt = grid.horizon_node();
    let (s, r) = (oracle.s_region().clone(), oracle.r_region().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let f = random_source(&s, grid, nt - 2, &mut rng);
        let h = random_source(&r, grid, nt - 1, &mut rng);
        let data_side = blago_pair(oracle, &f, &h, grid.horizon)?;
        let a = modal_coefficients(dec, &f, grid.horizon)?;
        let b = modal_coefficients(dec, &h, grid.horizon)?;
        let direct: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max((data_side - direct).abs() / (na * nb).max(f64::MIN_POSITIVE));
    }
    Ok(SuiteResult::below("blagovestchenskii", worst, tolerance, format!("{pairs} pairs")))
}

/// Closed-form modal coefficients of u^f(T) against the projection of the
/// solved field, over every mode.
pub fn modal_suite(
    dec: &SpectralDecomposition,
    s: &Region,
    grid: TimeGrid,
    sources: usize,
    seed: u64,
    tolerance: f64,
) -> Result<SuiteResult> {
    let nt = grid.horizon_node();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sources {
        let f = random_source(s, grid, nt - 1, &mut rng);
        let c = modal_coefficients(dec, &f, grid.horizon)?;
        let proj = dec.modal_coefficients(&solve(dec, &f)?.at(nt));
        for (x, y) in c.iter().zip(&proj) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(SuiteResult::below(
        "modal",
        worst,
        tolerance,
        format!("{sources} sources x {} modes", dec.n_modes()),
    ))
}

pub fn condition_c_suite(
    dec: &SpectralDecomposition,
    s: &Region,
    clusters: Option<usize>,
    tau_c: f64,
) -> Result<SuiteResult> {
    let rep = condition_c_audit(dec, s, clusters, tau_c)?;
    let worst = rep.worst_restricted_norm.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SuiteResult {
        name: "condition_c".into(),
        value: worst,
        tolerance: tau_c,
        passed: rep.passed,
        detail: format!("{} clusters, C0 = {:.6e}", rep.worst_restricted_norm.len(), rep.c0),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterCheck {
    pub index: usize,
    pub lambda_hat: f64,
    pub lambda: f64,
    pub multiplicity_hat: usize,
    pub multiplicity: usize,
    pub residue: f64,
    pub rel_error: f64,
    /// NaN when the multiplicities differ.
    pub angle: f64,
}

/// Recovers the spectrum with a Gaussian probe and compares the first
/// `clusters` clusters with the decomposition.
pub fn spectrum_suite(
    dec: &SpectralDecomposition,
    oracle: &DataOracle,
    clusters: usize,
    probe_width: f64,
    tol_lambda: f64,
    tol_angle: f64,
) -> Result<(SuiteResult, RecoveredSpectrum, Vec<ClusterCheck>)> {
    let grid = oracle.grid();
    let spec = recover_spectrum(oracle, &Probe::gaussian(oracle.n_s(), &grid, probe_width), SpectrumOptions::default())?;
    let truth = dec.cluster_values();
    let ms = oracle.s_mass().to_vec();
    let sv = oracle.s_region().vertices.clone();
    let mut checks = Vec::new();
    for j in 0..clusters.min(truth.len()) {
        let Some(c) = spec.clusters.get(j) else { break };
        let range = dec.clusters[j].clone();
        let raw = DMatrix::from_fn(sv.len(), range.len(), |i, k| dec.eigenvectors[(sv[i], range.start + k)]);
        let q = weighted_orthonormalize(&raw, &ms, 1e-10);
        let angle = if c.multiplicity == q.ncols() { max_principal_angle(&q, &c.basis, &ms) } else { f64::NAN };
        checks.push(ClusterCheck {
            index: j,
            lambda_hat: c.lambda,
            lambda: truth[j],
            multiplicity_hat: c.multiplicity,
            multiplicity: range.len(),
            residue: c.residue_norm,
            rel_error: (c.lambda - truth[j]).abs() / truth[j].max(1e-12),
            angle,
        });
    }
    let complete = checks.len() == clusters.min(truth.len());
    let lam_err = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let ang = checks.iter().map(|c| if c.angle.is_nan() { f64::INFINITY } else { c.angle }).fold(0.0, f64::max);
    let mult_ok = checks.iter().all(|c| c.multiplicity_hat == c.multiplicity);
    let passed = complete && mult_ok && lam_err <= tol_lambda && ang <= tol_angle;
    let detail = format!(
        "{} of {clusters} clusters, max angle {ang:.3e}, multiplicities {}",
        checks.len(),
        if mult_ok { "match" } else { "differ" }
    );
    Ok((SuiteResult { name: "spectrum".into(), value: lam_err, tolerance: tol_lambda, passed, detail }, spec, checks))
}
