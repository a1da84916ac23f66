//! Weak convergence of {u^{f_l}(T)} tested through pairings with a finite
//! probe dictionary on S.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::l2::tail_slope;
use super::{horizon_node, pairing_field, DataOracle, SparseSource};
use crate::wave::TimeGrid;
use crate::{Error, Result};

pub const DEFAULT_TAU_W: f64 = 1e-3;

/// Canonical impulses (every basis node in (0,T) × every S vertex) and
/// random smooth probes, each stored as (nt+1) × |S| values.
#[derive(Clone, Debug)]
pub struct ProbeDictionary {
    pub canonical: bool,
    pub random: Vec<DMatrix<f64>>,
}

impl ProbeDictionary {
    pub fn len(&self, grid: &TimeGrid, n_s: usize) -> usize {
        let nt = grid.horizon_node();
        self.random.len() + if self.canonical { nt.saturating_sub(3) * n_s } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        !self.canonical && self.random.is_empty()
    }
}

/// `count` probes: three cos² time bumps at random centers and widths in
/// (0,T), each with random Gaussian spatial weights on S.
pub fn random_smooth_probes(grid: &TimeGrid, horizon: f64, n_s: usize, count: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    let nt = horizon_node(grid, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = 2.0 * grid.dt;
    let hi = grid.t(nt - 2);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut p = DMatrix::zeros(nt + 1, n_s);
        for _ in 0..3 {
            let width = rng.gen_range(0.05..0.25) * (hi - lo);
            let center = rng.gen_range(lo + width..hi - width);
            let w: Vec<f64> = (0..n_s).map(|_| rng.sample(StandardNormal)).collect();
            for m in 2..nt - 1 {
                let x = (grid.t(m) - center) / width;
                if x.abs() < 1.0 {
                    let a = (std::f64::consts::FRAC_PI_2 * x).cos().powi(2);
                    for s in 0..n_s {
                        p[(m, s)] += a * w[s];
                    }
                }
            }
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakReport {
    pub converges: bool,
    /// Pairings stay uniformly bounded along the sequence.
    pub bounded_pairings: bool,
    /// Every probe's pairings decay on the tail.
    pub decaying_pairings: bool,
    pub threshold: f64,
    /// Random-probe pairings per sequence index.
    pub random_pairings: Vec<Vec<f64>>,
    /// max over canonical probes of |pairing| per sequence index.
    pub canonical_max: Vec<f64>,
    /// Failing probes: ("canonical", node, s) or ("random", index, 0).
    pub failing: Vec<(String, usize, usize)>,
}

pub fn weak_convergence_test(
    oracle: &DataOracle,
    sequence: &[SparseSource],
    dictionary: &ProbeDictionary,
    horizon: f64,
    tau_w: f64,
    radius_bound: Option<f64>,
) -> Result<WeakReport> {
    if dictionary.is_empty() {
        return Err(Error::Config("empty probe dictionary".into()));
    }
    if sequence.is_empty() {
        return Err(Error::Config("empty source sequence".into()));
    }
    if let Some(r) = radius_bound {
        if horizon <= r {
            return Err(Error::Config(format!("T = {horizon} must exceed the radius bound {r} of S")));
        }
    }
    let fields: Vec<DMatrix<f64>> = sequence
        .iter()
        .map(|f| pairing_field(oracle, f, horizon))
        .collect::<Result<_>>()?;
    let random: Vec<Vec<f64>> = fields
        .iter()
        .map(|a| dictionary.random.iter().map(|p| p.component_mul(a).sum()).collect())
        .collect();
    let canonical_max: Vec<f64> = fields.iter().map(|a| if dictionary.canonical { a.amax() } else { 0.0 }).collect();

    let head = sequence.len().div_ceil(2);
    let first_scale = {
        let c = canonical_max[0];
        let r = random[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let s = c.max(r);
        if s > 0.0 {
            s
        } else {
            canonical_max.iter().chain(random.iter().flatten()).fold(0.0f64, |m, v| m.max(v.abs()))
        }
    };
    let threshold = tau_w * first_scale;

    let mut failing = Vec::new();
    let decays = |series: &[f64]| -> bool {
        let tail_max = series[series.len() / 2..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        tail_max <= threshold || tail_slope(series) <= -0.5
    };
    for p in 0..dictionary.random.len() {
        let series: Vec<f64> = random.iter().map(|row| row[p]).collect();
        if !decays(&series) {
            failing.push(("random".to_string(), p, 0));
        }
    }
    if dictionary.canonical {
        let nt = fields[0].nrows() - 1;
        for m in 2..nt - 1 {
            for s in 0..fields[0].ncols() {
                let series: Vec<f64> = fields.iter().map(|a| a[(m, s)]).collect();
                if !decays(&series) {
                    failing.push(("canonical".to_string(), m, s));
                }
            }
        }
    }
    let abs_max = |rows: std::ops::Range<usize>| -> f64 {
        rows.map(|l| random[l].iter().fold(canonical_max[l], |m, v| m.max(v.abs()))).fold(0.0, f64::max)
    };
    let bounded = abs_max(head..sequence.len()) <= 2.0 * abs_max(0..head) + f64::MIN_POSITIVE;
    let decaying = failing.is_empty();
    Ok(WeakReport {
        converges: bounded && decaying,
        bounded_pairings: bounded,
        decaying_pairings: decaying,
        threshold,
        random_pairings: random,
        canonical_max,
        failing,
    })
}
