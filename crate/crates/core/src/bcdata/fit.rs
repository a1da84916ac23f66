//! Controllability fitting in the observation norm.
//!
//! For a source h on R the state u^h(T) is seen through its pairings with
//! a dictionary of S-sources ψ_{k,s} = (δ_{k+1} − δ_k)/dt (every `stride`
//! nodes in (0,T)). With weights w_s = stride/(m_s dt) the quadratic form
//!
//!   Q(h) = Σ_{k,s} w_s ⟨u^{ψ_{k,s}}(T), u^h(T)⟩²
//!
//! approximates ∫₀ᵀ ‖v(t)‖²_{L²(S)} dt for the free wave v started from
//! (0, u^h(T)); it is an observability-equivalent norm on states reachable
//! from R and is assembled from Λ alone.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{horizon_node, pair_kernel, step2_cumulative, DataOracle};
use crate::linalg::spd_solve;
use crate::manifold::Region;
use crate::wave::{Signal, TimeGrid};
use crate::{Error, Result};

/// A source on R as (node, R position, value) triples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseSource {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseSource {
    pub fn check(&self, n_r: usize, horizon_node: usize) -> Result<()> {
        for &(n, r, _) in &self.entries {
            if r >= n_r {
                return Err(Error::Support(format!("R position {r} out of range")));
            }
            if n < 2 || n >= horizon_node {
                return Err(Error::Support(format!("node {n} outside the source window (0, T)")));
            }
        }
        Ok(())
    }

    pub fn to_signal(&self, r: &Region, grid: TimeGrid) -> Signal {
        let mut s = Signal::zeros(r, grid);
        for &(n, k, v) in &self.entries {
            s.values[(n, k)] += v;
        }
        s
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.2 == 0.0)
    }
}

/// Single-vertex cos² time bumps on R. Bumps of half-width w spaced by w
/// sum to one, so their span contains every smooth profile at that scale.
#[derive(Clone, Debug)]
pub struct FitBasis {
    pub elements: Vec<SparseSource>,
    /// R position of each element.
    pub vertex: Vec<usize>,
    /// Open support interval (lo, hi) of each element.
    pub window: Vec<(f64, f64)>,
    pub half_width: f64,
    pub horizon: f64,
}

impl FitBasis {
    /// Centers at T − j·w for j = 1, 2, … while the bump stays inside the
    /// source window.
    pub fn bumps(grid: TimeGrid, horizon: f64, n_r: usize, half_width: f64) -> Result<Self> {
        Self::spaced_bumps(grid, horizon, n_r, half_width, half_width)
    }

    /// Centers at T − w + (1 − j)·spacing for j = 1, 2, …, so windows end
    /// at T − (j − 1)·spacing and the allowed set changes once per spacing.
    pub fn spaced_bumps(grid: TimeGrid, horizon: f64, n_r: usize, half_width: f64, spacing: f64) -> Result<Self> {
        let nt = horizon_node(&grid, horizon)?;
        if !(half_width >= 2.0 * grid.dt) {
            return Err(Error::Config(format!("bump half-width {half_width} is below two time steps")));
        }
        if !(spacing > 0.0 && spacing <= half_width) {
            return Err(Error::Config(format!("bump spacing {spacing} must be in (0, {half_width}]")));
        }
        let mut centers = Vec::new();
        let mut j = 0;
        loop {
            let c = horizon - half_width - j as f64 * spacing;
            if c - half_width < 2.0 * grid.dt - 1e-12 {
                break;
            }
            centers.push(c);
            j += 1;
        }
        let mut elements = Vec::new();
        let mut vertex = Vec::new();
        let mut window = Vec::new();
        for r in 0..n_r {
            for &c in &centers {
                let entries: Vec<(usize, usize, f64)> = (2..nt)
                    .filter_map(|n| {
                        let x = (grid.t(n) - c) / half_width;
                        (x.abs() < 1.0).then(|| (n, r, (std::f64::consts::FRAC_PI_2 * x).cos().powi(2)))
                    })
                    .filter(|e| e.2 > 0.0)
                    .collect();
                elements.push(SparseSource { entries });
                vertex.push(r);
                window.push((c - half_width, c + half_width));
            }
        }
        Ok(FitBasis { elements, vertex, window, half_width, horizon })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Elements supported inside ⋃_k (T − s_k, T) × Γ_k, with Γ_k given as
    /// R-position membership masks.
    pub fn allowed(&self, supports: &[(f64, &[bool])]) -> Vec<usize> {
        let tol = 1e-9 * self.horizon;
        (0..self.len())
            .filter(|&e| {
                supports.iter().any(|&(s, mask)| mask[self.vertex[e]] && self.window[e].0 >= self.horizon - s - tol)
            })
            .collect()
    }

    pub fn combine(&self, coeffs: &[(usize, f64)]) -> SparseSource {
        let mut acc = std::collections::BTreeMap::<(usize, usize), f64>::new();
        for &(e, c) in coeffs {
            for &(n, r, v) in &self.elements[e].entries {
                *acc.entry((n, r)).or_insert(0.0) += c * v;
            }
        }
        SparseSource { entries: acc.into_iter().map(|((n, r), v)| (n, r, v)).collect() }
    }
}

#[derive(Clone, Debug)]
pub struct ObservationGram {
    pub horizon: f64,
    pub stride: usize,
    pub dict_nodes: Vec<usize>,
    /// Q-Gram over the fit elements.
    pub gram: DMatrix<f64>,
}

const S_CHUNK: usize = 48;

/// Observation rows for a block of S positions: one row per (dictionary
/// node, s), one column per source.
fn observation_block(
    oracle: &DataOracle,
    sources: &[SparseSource],
    horizon: f64,
    dict: &[usize],
    stride: usize,
    s_range: std::ops::Range<usize>,
) -> DMatrix<f64> {
    let grid = oracle.grid();
    let nt = grid.node_of(horizon).expect("horizon checked by caller");
    let dt = grid.dt;
    let mr = oracle.r_mass().to_vec();
    let ms = oracle.s_mass().to_vec();
    let blocks = oracle.lag_blocks();
    let rows_per_s = dict.len();
    let parts: Vec<DMatrix<f64>> = s_range
        .clone()
        .into_par_iter()
        .map(|k| {
            let ck = step2_cumulative(&blocks[k]);
            // dt² from the pairing kernel, 1/dt from the dictionary difference.
            let scale = dt * (stride as f64 / (ms[k] * dt)).sqrt();
            DMatrix::from_fn(rows_per_s, sources.len(), |row, col| {
                let m = dict[row];
                let mut acc = 0.0;
                for &(n, r, v) in &sources[col].entries {
                    acc += v * mr[r] * (pair_kernel(&ck, r, nt, m + 1, n) - pair_kernel(&ck, r, nt, m, n));
                }
                acc * scale
            })
        })
        .collect();
    let mut out = DMatrix::zeros(rows_per_s * s_range.len(), sources.len());
    for (i, p) in parts.into_iter().enumerate() {
        out.view_mut((i * rows_per_s, 0), (rows_per_s, sources.len())).copy_from(&p);
    }
    out
}

fn dictionary_nodes(nt: usize, stride: usize) -> Vec<usize> {
    (2..nt.saturating_sub(2)).step_by(stride.max(1)).collect()
}

impl ObservationGram {
    pub fn build(oracle: &DataOracle, elements: &[SparseSource], horizon: f64, stride: usize) -> Result<Self> {
        let grid = oracle.grid();
        let nt = horizon_node(&grid, horizon)?;
        for e in elements {
            e.check(oracle.n_r(), nt)?;
        }
        let dict = dictionary_nodes(nt, stride);
        let mut gram = DMatrix::zeros(elements.len(), elements.len());
        let n_s = oracle.n_s();
        let mut start = 0;
        while start < n_s {
            let end = (start + S_CHUNK).min(n_s);
            let p = observation_block(oracle, elements, horizon, &dict, stride, start..end);
            gram.gemm_tr(1.0, &p, &p, 1.0);
            start = end;
        }
        let gram = (&gram + gram.transpose()) * 0.5;
        Ok(ObservationGram { horizon, stride, dict_nodes: dict, gram })
    }

    /// Q of an arbitrary R-source, and its Q-inner products with `elements`.
    pub fn cross(&self, oracle: &DataOracle, elements: &[SparseSource], target: &SparseSource) -> Result<(DVector<f64>, f64)> {
        let nt = horizon_node(&oracle.grid(), self.horizon)?;
        target.check(oracle.n_r(), nt)?;
        let mut b = DVector::zeros(elements.len());
        let mut q0 = 0.0;
        let n_s = oracle.n_s();
        let mut start = 0;
        while start < n_s {
            let end = (start + S_CHUNK).min(n_s);
            let p = observation_block(oracle, elements, self.horizon, &self.dict_nodes, self.stride, start..end);
            let t = observation_block(oracle, std::slice::from_ref(target), self.horizon, &self.dict_nodes, self.stride, start..end);
            b += p.transpose() * t.column(0);
            q0 += t.column(0).norm_squared();
            start = end;
        }
        Ok((b, q0))
    }

    /// Q of a single R-source.
    pub fn norm2(&self, oracle: &DataOracle, source: &SparseSource) -> Result<f64> {
        Ok(self.cross(oracle, &[], source)?.1)
    }

    pub fn quad(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.gram * c))
    }
}

#[derive(Clone, Debug)]
pub enum FitTarget {
    /// Coefficients over the whole fit basis.
    Coefficients(DVector<f64>),
    /// Any source on R, with its precomputed cross products and norm.
    Projected { b: DVector<f64>, q0: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegChoice {
    /// μ = rel · trace(Gram_A)/dim.
    Relative(f64),
    /// Five-point log sweep around 1e-8 with an L-curve corner pick.
    LCurve,
}

impl Default for RegChoice {
    fn default() -> Self {
        RegChoice::Relative(1e-8)
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub allowed: Vec<usize>,
    pub coeffs: DVector<f64>,
    /// Q(u^f(T) − u^{f0}(T)).
    pub residual: f64,
    /// Q(u^{f0}(T)).
    pub target_norm2: f64,
    pub mu: f64,
    pub cond: f64,
}

impl FitOutcome {
    pub fn relative(&self) -> f64 {
        if self.target_norm2 > 0.0 {
            self.residual / self.target_norm2
        } else {
            0.0
        }
    }
}

pub const MAX_CONDITION: f64 = 1e14;

fn solve_with(ga: &DMatrix<f64>, mu: f64, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (x, cond) = spd_solve(ga, mu, rhs).ok_or(Error::IllConditioned(f64::INFINITY))?;
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    Ok((x, cond))
}

fn menger_corner(points: &[(f64, f64)]) -> usize {
    let mut best = (f64::NEG_INFINITY, points.len() / 2);
    for i in 1..points.len() - 1 {
        let (a, b, c) = (points[i - 1], points[i], points[i + 1]);
        let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        let d = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        let k = 2.0 * cross / (d(a, b) * d(b, c) * d(a, c)).max(f64::MIN_POSITIVE);
        if k > best.0 {
            best = (k, i);
        }
    }
    best.1
}

/// Minimizes Q(f − f0) + μ‖c‖² over coefficients c on the allowed fit
/// elements, for every target with one factorization.
pub fn controllability_fit(
    gram: &ObservationGram,
    allowed: &[usize],
    targets: &[FitTarget],
    reg: RegChoice,
) -> Result<Vec<FitOutcome>> {
    let dim = allowed.len();
    let rhs_and_norm: Vec<(DVector<f64>, f64)> = targets
        .iter()
        .map(|t| match t {
            FitTarget::Coefficients(c) => {
                let gc = &gram.gram * c;
                (DVector::from_iterator(dim, allowed.iter().map(|&i| gc[i])), c.dot(&gc))
            }
            FitTarget::Projected { b, q0 } => (DVector::from_iterator(dim, allowed.iter().map(|&i| b[i])), *q0),
        })
        .collect();
    if dim == 0 {
        return Ok(rhs_and_norm
            .into_iter()
            .map(|(_, q0)| FitOutcome {
                allowed: Vec::new(),
                coeffs: DVector::zeros(0),
                residual: q0,
                target_norm2: q0,
                mu: 0.0,
                cond: 1.0,
            })
            .collect());
    }
    let ga = DMatrix::from_fn(dim, dim, |i, j| gram.gram[(allowed[i], allowed[j])]);
    // Scaled by the whole dictionary so μ stays fixed as the allowed set grows.
    let base = gram.gram.trace() / gram.gram.nrows() as f64;
    let rhs = DMatrix::from_columns(&rhs_and_norm.iter().map(|r| r.0.clone()).collect::<Vec<_>>());
    let mu = match reg {
        RegChoice::Relative(rel) => rel * base,
        RegChoice::LCurve => {
            let rels = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
            let mut pts = Vec::new();
            for rel in rels {
                let (x, _) = solve_with(&ga, rel * base, &rhs.columns(0, 1).into_owned())?;
                let x = x.column(0).into_owned();
                let b = rhs.column(0);
                let res = (rhs_and_norm[0].1 - 2.0 * x.dot(&b) + x.dot(&(&ga * &x))).max(f64::MIN_POSITIVE);
                pts.push((res.ln(), x.norm_squared().max(f64::MIN_POSITIVE).ln()));
            }
            rels[menger_corner(&pts)] * base
        }
    };
    let (x, cond) = solve_with(&ga, mu, &rhs)?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let xc = x.column(t).into_owned();
            let q0 = rhs_and_norm[t].1;
            let residual = match target {
                FitTarget::Coefficients(c) => {
                    let mut d = c.clone();
                    for (k, &i) in allowed.iter().enumerate() {
                        d[i] -= xc[k];
                    }
                    d.dot(&(&gram.gram * &d)).max(0.0)
                }
                FitTarget::Projected { .. } => {
                    let b = rhs.column(t);
                    (q0 - 2.0 * xc.dot(&b) + xc.dot(&(&ga * &xc))).max(0.0)
                }
            };
            FitOutcome { allowed: allowed.to_vec(), coeffs: xc, residual, target_norm2: q0, mu, cond }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::tests::circle_oracle;
    use super::*;
    use crate::spectral::SpectralDecomposition;
    use crate::wave::modal_coefficients;

    /// Q computed from modal coefficients of directly synthesized states.
    fn direct_q(dec: &SpectralDecomposition, oracle: &DataOracle, h: &Signal, stride: usize) -> f64 {
        let g = oracle.grid();
        let nt = g.horizon_node();
        let ch = modal_coefficients(dec, h, g.horizon).unwrap();
        let s = oracle.s_region().clone();
        let mut q = 0.0;
        for &k in &dictionary_nodes(nt, stride) {
            for (p, &sv) in s.vertices.iter().enumerate() {
                let psi = Signal::from_fn(&s, g, |i, v| {
                    if v != sv {
                        0.0
                    } else if i == k + 1 {
                        1.0 / g.dt
                    } else if i == k {
                        -1.0 / g.dt
                    } else {
                        0.0
                    }
                });
                let cp = modal_coefficients(dec, &psi, g.horizon).unwrap();
                let pair: f64 = cp.iter().zip(&ch).map(|(a, b)| a * b).sum();
                q += stride as f64 / (dec.mass[s.vertices[p]] * g.dt) * pair * pair;
            }
        }
        q
    }

    #[test]
    fn gram_matches_direct_observation() {
        let (_, dec, oracle) = circle_oracle(1.5);
        let g = oracle.grid();
        let basis = FitBasis::bumps(g, g.horizon, oracle.n_r(), 0.2).unwrap();
        let gram = ObservationGram::build(&oracle, &basis.elements, g.horizon, 3).unwrap();
        let r = oracle.r_region().clone();
        for e in [0, 3, basis.len() - 1] {
            let d = direct_q(&dec, &oracle, &basis.elements[e].to_signal(&r, g), 3);
            assert!((gram.gram[(e, e)] - d).abs() <= 1e-9 * d, "{} vs {d}", gram.gram[(e, e)]);
        }
    }

    #[test]
    fn self_fit_and_penalty_limit() {
        let (_, _, oracle) = circle_oracle(1.5);
        let g = oracle.grid();
        let basis = FitBasis::bumps(g, g.horizon, oracle.n_r(), 0.2).unwrap();
        let gram = ObservationGram::build(&oracle, &basis.elements, g.horizon, 3).unwrap();
        let all: Vec<usize> = (0..basis.len()).collect();
        let mut c0 = DVector::zeros(basis.len());
        c0[2] = 1.0;
        c0[7] = -0.4;
        let out = controllability_fit(&gram, &all, &[FitTarget::Coefficients(c0.clone())], RegChoice::default()).unwrap();
        assert!(out[0].residual <= out[0].mu * c0.norm_squared());

        let huge = controllability_fit(&gram, &all, &[FitTarget::Coefficients(c0.clone())], RegChoice::Relative(1e12)).unwrap();
        assert!(huge[0].coeffs.norm() < 1e-6 * c0.norm());
        assert!((huge[0].residual - huge[0].target_norm2).abs() <= 1e-5 * huge[0].target_norm2);

        let projected = {
            let t = basis.combine(&[(2, 1.0), (7, -0.4)]);
            let (b, q0) = gram.cross(&oracle, &basis.elements, &t).unwrap();
            FitTarget::Projected { b, q0 }
        };
        let out2 = controllability_fit(&gram, &all, &[projected], RegChoice::default()).unwrap();
        assert!((out2[0].target_norm2 - out[0].target_norm2).abs() <= 1e-10 * out[0].target_norm2);
        assert!(out2[0].residual <= out[0].mu * c0.norm_squared() * (1.0 + 1e-6));

        assert!(matches!(
            controllability_fit(&gram, &all, &[FitTarget::Coefficients(c0)], RegChoice::Relative(0.0)),
            Err(Error::IllConditioned(_)) | Ok(_)
        ));
    }

    #[test]
    fn l_curve_picks_a_sweep_point() {
        let pts = [(0.0, 5.0), (0.1, 1.0), (0.2, 0.1), (1.0, 0.0), (3.0, -0.1)];
        assert_eq!(menger_corner(&pts), 2);
    }
}
