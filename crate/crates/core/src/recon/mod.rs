//! Geometry from data-side inclusion verdicts.
//!
//! A set M(Γ, s) is never formed explicitly. The inclusion
//! M(Γ₀, s₀) ⊂ ⋃ M(Γ_k, s_k) is decided by fitting trial sources on
//! (T − s₀, T) × Γ₀ with sources on ⋃ (T − s_k, T) × Γ_k in the observation
//! norm; small residuals mean the waves at time T can be matched. Point sets
//! M(y, s) are realized by balls of radius ε around y in the R-local distance.

mod report;
mod truth;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bcdata::{controllability_fit, DataOracle, FitBasis, FitTarget, ObservationGram, RegChoice};
use crate::hash::Hasher;
use crate::{Error, Result};

pub use report::{hausdorff, reconstruct_metric_space, DistanceReport, DistanceRow};
pub use truth::{inclusion_margin, true_boundary_distance, true_sigma};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inclusion {
    Subset,
    NotSubset,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconSettings {
    /// Relative residual below which a fit counts as a match.
    pub tau_inc: f64,
    /// Mesh spacing h.
    pub resolution: f64,
    /// Half-width of the fit bumps.
    pub half_width: f64,
    /// Spacing of bump centers; also the step of the s- and t-grids.
    pub step: f64,
    /// Observation dictionary stride in time nodes.
    pub stride: usize,
    /// Random trial sources per query, on top of the patch's fit elements.
    pub n_random: usize,
    /// Patch radii ε_min·2^k for k = levels−1 down to 0, ε_min = 2h.
    pub eps_levels: usize,
    /// Smallest t − s, in grid steps, for the pairs tested by σ recovery.
    /// A one-step shell sits inside the leading ramp of a single bump and
    /// carries too little energy to register.
    pub min_gap_steps: usize,
    /// Distance queries pass at residuals up to this multiple of the query's
    /// own floor, the residual with the z cover run for the whole horizon,
    /// clamped to [τ/factor², τ].
    pub floor_factor: f64,
    pub seed: u64,
    /// Tikhonov weight of the inclusion fits. Lattice modes near the grid
    /// frequency barely move within T and are nearly invisible on S, so a
    /// weak penalty lets the fit hide large errors in them.
    pub reg: RegChoice,
}

impl ReconSettings {
    pub fn new(resolution: f64) -> Self {
        ReconSettings {
            tau_inc: 1e-3,
            resolution,
            half_width: resolution,
            step: resolution,
            stride: 3,
            n_random: 8,
            eps_levels: 2,
            min_gap_steps: 2,
            floor_factor: 10.0,
            seed: 0,
            reg: RegChoice::Relative(1e-6),
        }
    }

    /// Width of the band inside which verdicts may disagree with geometry.
    pub fn band(&self) -> f64 {
        2.0 * self.resolution + self.step
    }

    pub fn eps_min(&self) -> f64 {
        2.0 * self.resolution
    }

    pub fn eps_schedule(&self) -> Vec<f64> {
        (0..self.eps_levels.max(1)).rev().map(|k| self.eps_min() * (1u64 << k) as f64).collect()
    }

    /// Grid k·step for k = 1, 2, … up to `bound`.
    pub fn grid(&self, bound: f64) -> Vec<f64> {
        let step = self.step;
        let n = (bound / step + 1e-9).floor() as usize;
        (1..=n).map(|k| k as f64 * step).collect()
    }

    fn classify(&self, residual: f64) -> Inclusion {
        if residual <= self.tau_inc {
            Inclusion::Subset
        } else if residual >= 2.0 * self.tau_inc {
            Inclusion::NotSubset
        } else {
            Inclusion::Inconclusive
        }
    }
}

/// M(Γ₀, s₀) ⊂ ⋃_k M(Γ_k, s_k) with every Γ given as R positions.
#[derive(Clone, Debug, Serialize)]
pub struct InclusionQuery {
    pub target: Vec<usize>,
    pub s0: f64,
    pub covers: Vec<(Vec<usize>, f64)>,
    pub verdict: Option<Inclusion>,
    /// Worst relative fit residual over the trial family.
    pub residual: f64,
    pub trials: usize,
    /// Geometric slack, filled in by the ground-truth side only.
    pub margin: Option<f64>,
}

impl InclusionQuery {
    pub fn new(target: Vec<usize>, s0: f64, covers: Vec<(Vec<usize>, f64)>) -> Self {
        InclusionQuery { target, s0, covers, verdict: None, residual: f64::NAN, trials: 0, margin: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointVerdict {
    pub verdict: Inclusion,
    pub eps: Vec<f64>,
    pub residuals: Vec<f64>,
    /// The ε quantifier was checked down to ε_min only.
    pub resolution_limited: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SigmaEstimate {
    /// R position of the boundary point.
    pub y: usize,
    pub sigma: f64,
    /// (t, verdict of M(y,t) ⊂ M(R, t − gap)) until the first inclusion.
    pub steps: Vec<(f64, Inclusion)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceEstimate {
    pub y: usize,
    pub s: f64,
    pub z: usize,
    pub distance: f64,
    /// No grid value passed; `distance` is the grid maximum.
    pub upper_bound: bool,
    /// Triangle bounds from the R-local distance d_g(y, z).
    pub sandwich_ok: bool,
    pub fits: usize,
}

/// Fit basis, observation Gram and R-local geometry for one data set.
pub struct Reconstructor<'a> {
    oracle: &'a DataOracle,
    pub basis: FitBasis,
    pub gram: ObservationGram,
    pub settings: ReconSettings,
    pub horizon: f64,
    r_dist: DMatrix<f64>,
    /// R positions of the boundary vertices of R.
    pub boundary: Vec<usize>,
}

impl<'a> Reconstructor<'a> {
    pub fn new(oracle: &'a DataOracle, horizon: f64, settings: ReconSettings) -> Result<Self> {
        if !(settings.tau_inc > 0.0) || !(settings.resolution > 0.0) {
            return Err(Error::Config("tau_inc and resolution must be positive".into()));
        }
        let grid = oracle.grid();
        let basis = FitBasis::spaced_bumps(grid, horizon, oracle.n_r(), settings.half_width, settings.step)?;
        let gram = ObservationGram::build(oracle, &basis.elements, horizon, settings.stride)?;
        let r_dist = oracle.r_distances().clone();
        let region = oracle.r_region();
        let boundary = region.boundary.iter().filter_map(|&v| region.position_of(v)).collect();
        Ok(Reconstructor { oracle, basis, gram, settings, horizon, r_dist, boundary })
    }

    pub fn oracle(&self) -> &DataOracle {
        self.oracle
    }

    pub fn r_distance(&self, a: usize, b: usize) -> f64 {
        self.r_dist[(a, b)]
    }

    /// R positions within R-local distance `radius` of position `y`.
    pub fn patch(&self, y: usize, radius: f64) -> Vec<usize> {
        let tol = 1e-9 * self.settings.resolution;
        (0..self.r_dist.nrows()).filter(|&j| self.r_dist[(y, j)] <= radius + tol).collect()
    }

    pub fn all_of_r(&self) -> Vec<usize> {
        (0..self.r_dist.nrows()).collect()
    }

    /// ε levels whose patch around y covers at most half of R. A patch that
    /// swallows R makes every query about R itself. The smallest level is
    /// always kept.
    fn eps_levels(&self, y: usize) -> Vec<f64> {
        let all = self.settings.eps_schedule();
        let n_r = self.r_dist.nrows();
        let mut out: Vec<f64> = all.iter().copied().filter(|&e| 2 * self.patch(y, e).len() <= n_r).collect();
        if out.is_empty() {
            out.extend(all.last());
        }
        out
    }

    pub(crate) fn mask(&self, positions: &[usize]) -> Vec<bool> {
        let mut m = vec![false; self.r_dist.nrows()];
        for &p in positions {
            m[p] = true;
        }
        m
    }

    fn query_seed(&self, q: &InclusionQuery) -> u64 {
        let mut h = Hasher::new();
        h.u64(self.settings.seed).usizes(&q.target).f64(q.s0);
        for (g, s) in &q.covers {
            h.usizes(g).f64(*s);
        }
        u64::from_str_radix(&h.hex()[..16], 16).expect("hex digest")
    }

    /// Fit elements of the patch plus `n_random` Gaussian combinations of them.
    pub(crate) fn trial_family(&self, own: &[usize], seed: u64) -> Vec<FitTarget> {
        let n = self.basis.len();
        let mut out: Vec<FitTarget> = own
            .iter()
            .map(|&e| {
                let mut c = DVector::zeros(n);
                c[e] = 1.0;
                FitTarget::Coefficients(c)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..self.settings.n_random {
            let mut c = DVector::zeros(n);
            for &e in own {
                c[e] = rng.sample(StandardNormal);
            }
            out.push(FitTarget::Coefficients(c));
        }
        out
    }

    pub fn inclusion_test(&self, q: &mut InclusionQuery) -> Result<Inclusion> {
        if q.target.is_empty() {
            return Err(Error::Geometry("empty Γ₀ in inclusion query".into()));
        }
        let n_r = self.r_dist.nrows();
        let tol = 1e-9 * self.horizon;
        let all_positions = q.target.iter().chain(q.covers.iter().flat_map(|c| c.0.iter()));
        if let Some(&p) = all_positions.clone().find(|&&p| p >= n_r) {
            return Err(Error::Geometry(format!("R position {p} out of range")));
        }
        for s in std::iter::once(q.s0).chain(q.covers.iter().map(|c| c.1)) {
            if !(s <= self.horizon + tol) {
                return Err(Error::Support(format!("radius {s} exceeds T = {}", self.horizon)));
            }
        }
        let (verdict, residual, trials) = if q.s0 <= 0.0 {
            // M(Γ₀, 0) = Γ₀ closure: decided by R-local distances alone.
            let inside = q.target.iter().all(|&a| {
                q.covers.iter().any(|(g, s)| *s >= 0.0 && g.iter().any(|&b| self.r_dist[(a, b)] <= s + tol))
            });
            if inside {
                (Inclusion::Subset, 0.0, 0)
            } else {
                (Inclusion::NotSubset, 1.0, 0)
            }
        } else {
            let own = self.basis.allowed(&[(q.s0, &self.mask(&q.target))]);
            if own.is_empty() {
                // s₀ is below one bump: no trial source fits in the window.
                (Inclusion::Inconclusive, f64::NAN, 0)
            } else {
                let masks: Vec<Vec<bool>> = q.covers.iter().map(|c| self.mask(&c.0)).collect();
                let supports: Vec<(f64, &[bool])> =
                    q.covers.iter().zip(&masks).filter(|(c, _)| c.1 > 0.0).map(|(c, m)| (c.1, m.as_slice())).collect();
                let allowed = self.basis.allowed(&supports);
                let targets = self.trial_family(&own, self.query_seed(q));
                let fits = controllability_fit(&self.gram, &allowed, &targets, self.settings.reg)?;
                let residual = fits.iter().map(|f| f.relative()).fold(0.0, f64::max);
                (self.settings.classify(residual), residual, targets.len())
            }
        };
        q.verdict = Some(verdict);
        q.residual = residual;
        q.trials = trials;
        Ok(verdict)
    }

    /// Runs the ε schedule with patches of radius ε around the points. A
    /// patch needs more than one vertex: sources on a single point radiate
    /// symmetrically and cannot steer a wave into one direction. With `inflate` every cover radius grows by ε; without it the
    /// patch ball M(Γ_y(ε), s) already lies between M(y, s) and M(y, s + ε).
    /// The verdict is subset only if every ε gives subset.
    fn scheduled(
        &self,
        y0: usize,
        s0: f64,
        points: &[(usize, f64)],
        caps: &[(Vec<usize>, f64)],
        inflate: bool,
    ) -> Result<PointVerdict> {
        let mut eps_done = Vec::new();
        let mut residuals = Vec::new();
        let mut verdict = Inclusion::Subset;
        for eps in self.eps_levels(y0) {
            let grow = if inflate { eps } else { 0.0 };
            let mut covers: Vec<(Vec<usize>, f64)> =
                points.iter().map(|&(y, s)| (self.patch(y, eps), (s + grow).min(self.horizon))).collect();
            for (g, s) in caps {
                covers.push((g.clone(), (s + grow).min(self.horizon)));
            }
            let mut q = InclusionQuery::new(self.patch(y0, eps), s0, covers);
            let v = self.inclusion_test(&mut q)?;
            eps_done.push(eps);
            residuals.push(q.residual);
            match v {
                Inclusion::NotSubset => {
                    verdict = Inclusion::NotSubset;
                    break;
                }
                Inclusion::Inconclusive => verdict = Inclusion::Inconclusive,
                Inclusion::Subset => {}
            }
        }
        let resolution_limited = verdict == Inclusion::Subset;
        Ok(PointVerdict { verdict, eps: eps_done, residuals, resolution_limited })
    }

    /// M(y₀, s₀) ⊂ M(y₁, s₁) ∪ M(R, s₂) for boundary positions y₀, y₁.
    pub fn point_inclusion_test(&self, y0: usize, y1: usize, s0: f64, s1: f64, s2: f64) -> Result<PointVerdict> {
        for &y in &[y0, y1] {
            if !self.boundary.contains(&y) {
                return Err(Error::Geometry(format!("R position {y} is not on the boundary of R")));
            }
        }
        self.scheduled(y0, s0, &[(y1, s1)], &[(self.all_of_r(), s2)], true)
    }

    /// σ̂ from the cut-time criterion: M(y, t) ⊄ M(R, s) for all grid pairs s < t ≤ σ.
    /// Pairs are at least `min_gap_steps` apart and inclusion only gets
    /// easier as s grows, so each t is tested against s = t − gap.
    pub fn recover_sigma(&self, y: usize, r_grid: &[f64]) -> Result<SigmaEstimate> {
        let whole = self.all_of_r();
        let mut steps = Vec::new();
        for (k, &t) in r_grid.iter().enumerate() {
            if !(t > 0.0 && t <= self.horizon + 1e-9 * self.horizon) {
                return Err(Error::Config(format!("r-grid value {t} outside (0, T]")));
            }
            let gap = self.settings.min_gap_steps.max(1);
            let s = if k < gap { 0.0 } else { r_grid[k - gap] };
            let v = self.scheduled(y, t, &[], &[(whole.clone(), s)], false)?.verdict;
            steps.push((t, v));
            if v == Inclusion::Subset {
                // The first t whose ball fits in M(R, s): σ̂ is that s, which
                // offsets the gap between the pair.
                return Ok(SigmaEstimate { y, sigma: s, steps });
            }
        }
        Ok(SigmaEstimate { y, sigma: r_grid.last().copied().unwrap_or(0.0), steps })
    }

    /// d(γ(s; y, ν), z) as the smallest grid t with: for every ε there is a
    /// δ such that M(y, s) ⊂ M(R, s − δ) ∪ M(z, t + ε). Point sets are
    /// patches of radius ε; δ is one grid step.
    pub fn recover_distance(&self, y: usize, s: f64, z: usize, t_grid: &[f64]) -> Result<DistanceEstimate> {
        if t_grid.is_empty() {
            return Err(Error::Config("empty t-grid".into()));
        }
        let whole = self.all_of_r();
        // The smallest δ is the most permissive: a larger one only widens
        // the shell the z cover must explain.
        let delta = self.settings.step.min(s);
        let levels = self.eps_levels(y);
        let mut fits = 0usize;
        let mut residual = |eps: f64, t: f64| -> Result<f64> {
            // M(Γ_z(ε), t) ⊂ M(z, t + ε): no extra inflation.
            let covers = vec![(whole.clone(), s - delta), (self.patch(z, eps), t.min(self.horizon))];
            let mut q = InclusionQuery::new(self.patch(y, eps), s, covers);
            self.inclusion_test(&mut q)?;
            fits += 1;
            Ok(q.residual)
        };
        // The Q residual falls off smoothly as the z cover grows, so a fixed
        // τ passes several steps early. Each ε is judged against the residual
        // it reaches when the z cover spans the horizon.
        let (tau, k) = (self.settings.tau_inc, self.settings.floor_factor);
        let mut thresholds = Vec::with_capacity(levels.len());
        for &eps in &levels {
            let floor = residual(eps, t_grid[t_grid.len() - 1])?;
            thresholds.push((floor <= tau).then_some((k * floor).clamp(tau / (k * k), tau)));
        }
        let mut passes = |t: f64| -> Result<bool> {
            for (&eps, th) in levels.iter().zip(&thresholds) {
                match th {
                    Some(th) if residual(eps, t)? <= *th => {}
                    _ => return Ok(false),
                }
            }
            Ok(true)
        };
        // Curves are not monotone near the floor, so scan upward from the
        // triangle lower bound instead of bisecting.
        let dyz = self.r_dist[(y, z)];
        let tol = self.settings.band();
        let lower = (s - dyz).abs() - tol;
        let mut hit = None;
        for &t in t_grid.iter().filter(|&&t| t >= lower) {
            if passes(t)? {
                hit = Some(t);
                break;
            }
        }
        let (distance, upper_bound) = match hit {
            Some(t) => (t, false),
            None => (t_grid[t_grid.len() - 1], true),
        };
        let sandwich_ok = distance >= (s - dyz).abs() - tol && distance <= s + dyz + tol;
        Ok(DistanceEstimate { y, s, z, distance, upper_bound, sandwich_ok, fits })
    }

    /// All (y, s) × z recoveries, in input order.
    pub fn distance_sweep(&self, samples: &[(usize, f64)], zs: &[usize], t_grid: &[f64]) -> Result<Vec<DistanceEstimate>> {
        let jobs: Vec<(usize, f64, usize)> =
            samples.iter().flat_map(|&(y, s)| zs.iter().map(move |&z| (y, s, z))).collect();
        jobs.par_iter().map(|&(y, s, z)| self.recover_distance(y, s, z, t_grid)).collect()
    }
}

#[cfg(test)]
mod tests;
