//! Modal (Duhamel) synthesis of waves driven by sources, the time-reversal
//! and J operators, and the source-to-solution archive.
//!
//! Time integrals use the frequency-corrected trapezoid kernel
//! `dt²·sin(ω k dt)/sin(ω dt)`: the trapezoid weight times `ωdt/sin(ωdt)`
//! (at most 1.7 % above it under the step bound). With this kernel the
//! product identity `G(a)G(b) = dt² Σ_{k=|a−b|+1, step 2}^{a+b−1} G(k)`
//! holds exactly, which makes every pairing identity exact on the grid.

mod lambda;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::hash::Hasher;
use crate::manifold::{DiscreteManifold, Region};
use crate::spectral::SpectralDecomposition;
use crate::{Error, Result};

pub use lambda::{assemble_lambda, provenance, read_archive, write_archive, SourceToSolutionData};

/// Below this eigenvalue the kernel uses the λ → 0 limit `dt²·k`.
pub const ZERO_MODE_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    /// Horizon T; the grid spans [0, 2T].
    pub horizon: f64,
    /// Even, so that T is a node.
    pub n_steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps < 8 || !n_steps.is_multiple_of(2) {
            return Err(Error::Config(format!("n_steps must be even and at least 8, got {n_steps}")));
        }
        Ok(TimeGrid { horizon, n_steps, dt: 2.0 * horizon / n_steps as f64 })
    }

    /// Largest admissible step for a spectrum topping out at `lambda_max`.
    pub fn dt_bound(lambda_max: f64) -> f64 {
        if lambda_max <= 0.0 {
            f64::INFINITY
        } else {
            std::f64::consts::PI / (10.0 * lambda_max.sqrt())
        }
    }

    /// Coarsest even grid with dt ≤ safety·bound.
    pub fn for_spectrum(horizon: f64, lambda_max: f64, safety: f64) -> Result<Self> {
        if !(safety > 0.0 && safety <= 1.0) {
            return Err(Error::Config(format!("dt safety factor must lie in (0, 1], got {safety}")));
        }
        let bound = safety * Self::dt_bound(lambda_max);
        let mut n = ((2.0 * horizon / bound) * (1.0 - 1e-12)).ceil().max(8.0) as usize;
        n += n % 2;
        TimeGrid::new(horizon, n)
    }

    pub fn check(&self, lambda_max: f64) -> Result<()> {
        let bound = Self::dt_bound(lambda_max);
        if self.dt > bound * (1.0 + 1e-12) {
            return Err(Error::TimeStep { dt: self.dt, bound });
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Index of the node at t = T.
    pub fn horizon_node(&self) -> usize {
        self.n_steps / 2
    }

    /// Node index of time `t`, if `t` lies on the grid.
    pub fn node_of(&self, t: f64) -> Option<usize> {
        let x = t / self.dt;
        let k = x.round();
        ((x - k).abs() <= 1e-9 * (1.0 + x.abs()) && k >= 0.0 && k as usize <= self.n_steps).then_some(k as usize)
    }

    /// Interior nodes carrying the canonical hat basis.
    pub fn basis_nodes(&self) -> std::ops::Range<usize> {
        2..self.n_steps - 1
    }

    pub fn feed(&self, h: &mut Hasher) {
        h.f64(self.horizon).u64(self.n_steps as u64);
    }
}

/// Per (time node, region vertex) values. Sources and traces share this
/// layout; sources additionally vanish on the first and last two nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub region_id: String,
    pub vertices: Vec<usize>,
    pub grid: TimeGrid,
    /// n_nodes × |vertices|.
    pub values: DMatrix<f64>,
}

pub type Source = Signal;
pub type Trace = Signal;

impl Signal {
    pub fn zeros(region: &Region, grid: TimeGrid) -> Self {
        Signal {
            region_id: region.manifold_id.clone(),
            vertices: region.vertices.clone(),
            grid,
            values: DMatrix::zeros(grid.n_nodes(), region.len()),
        }
    }

    pub fn new(region: &Region, grid: TimeGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != (grid.n_nodes(), region.len()) {
            return Err(Error::Support(format!(
                "signal shape {:?} does not match grid × region ({}, {})",
                values.shape(),
                grid.n_nodes(),
                region.len()
            )));
        }
        Ok(Signal { region_id: region.manifold_id.clone(), vertices: region.vertices.clone(), grid, values })
    }

    /// A signal that must also satisfy the source support rule.
    pub fn source(region: &Region, grid: TimeGrid, values: DMatrix<f64>) -> Result<Self> {
        let s = Signal::new(region, grid, values)?;
        s.check_source()?;
        Ok(s)
    }

    pub fn from_fn(region: &Region, grid: TimeGrid, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = DMatrix::from_fn(grid.n_nodes(), region.len(), |i, k| f(i, region.vertices[k]));
        Signal { region_id: region.manifold_id.clone(), vertices: region.vertices.clone(), grid, values }
    }

    pub fn check_source(&self) -> Result<()> {
        let n = self.grid.n_steps;
        for i in [0, 1, n - 1, n] {
            if self.values.row(i).iter().any(|&v| v != 0.0) {
                return Err(Error::Support(format!("source is nonzero at end node {i}")));
            }
        }
        Ok(())
    }

    /// Last node with a nonzero value.
    pub fn last_active_node(&self) -> Option<usize> {
        (0..self.values.nrows()).rev().find(|&i| self.values.row(i).iter().any(|&v| v != 0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Space-time inner product dt·Σ_i Σ_v m_v a(i,v) b(i,v).
    pub fn dot(&self, other: &Signal, mass: &[f64]) -> f64 {
        assert_eq!(self.values.shape(), other.values.shape());
        let mut acc = 0.0;
        for (k, &w) in mass.iter().enumerate() {
            let a = self.values.column(k);
            let b = other.values.column(k);
            acc += w * a.dot(&b);
        }
        acc * self.grid.dt
    }

    /// Values of `self` in the same layout, zero-extended to `region`.
    pub fn restrict_to(&self, region: &Region) -> Signal {
        let mut out = Signal::zeros(region, self.grid);
        for (k, v) in self.vertices.iter().enumerate() {
            if let Some(j) = region.position_of(*v) {
                out.values.set_column(j, &self.values.column(k));
            }
        }
        out
    }
}

/// Lag kernels for every mode, lags 0..=n_steps.
#[derive(Clone, Debug)]
pub struct ModalKernel {
    /// (n_steps+1) × n_modes; row k is `dt²·sin(ω k dt)/sin(ω dt)`.
    pub displacement: DMatrix<f64>,
    /// Same shape; row 0 holds the half weight used at the current node.
    pub velocity: DMatrix<f64>,
}

pub fn displacement_kernel(lambda: f64, k: usize, dt: f64) -> f64 {
    if lambda < ZERO_MODE_THRESHOLD {
        dt * dt * k as f64
    } else {
        let wd = lambda.sqrt() * dt;
        dt * dt * (wd * k as f64).sin() / wd.sin()
    }
}

fn velocity_kernel(lambda: f64, k: usize, dt: f64) -> f64 {
    let v = if lambda < ZERO_MODE_THRESHOLD {
        dt
    } else {
        let w = lambda.sqrt();
        dt * dt * w * (w * dt * k as f64).cos() / (w * dt).sin()
    };
    if k == 0 {
        0.5 * v
    } else {
        v
    }
}

pub fn modal_kernel(eigenvalues: &[f64], grid: &TimeGrid) -> ModalKernel {
    let n = grid.n_nodes();
    let displacement = DMatrix::from_fn(n, eigenvalues.len(), |k, a| displacement_kernel(eigenvalues[a], k, grid.dt));
    let velocity = DMatrix::from_fn(n, eigenvalues.len(), |k, a| velocity_kernel(eigenvalues[a], k, grid.dt));
    ModalKernel { displacement, velocity }
}

#[derive(Clone, Debug)]
pub struct WaveField {
    pub grid: TimeGrid,
    /// n_nodes × n_vertices.
    pub values: DMatrix<f64>,
    /// n_nodes × n_modes coefficient trajectories.
    pub modal: Option<DMatrix<f64>>,
    pub modal_velocity: Option<DMatrix<f64>>,
}

impl WaveField {
    pub fn at(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Modal energy Σ_a v_a² + λ_a u_a² per node; with a complete
    /// decomposition this is ‖∂_t u‖²_mass + ⟨u, stiffness·u⟩.
    pub fn energy(&self, eigenvalues: &[f64]) -> Option<Vec<f64>> {
        let (u, v) = (self.modal.as_ref()?, self.modal_velocity.as_ref()?);
        Some(
            (0..u.nrows())
                .map(|i| (0..u.ncols()).map(|a| v[(i, a)].powi(2) + eigenvalues[a] * u[(i, a)].powi(2)).sum())
                .collect(),
        )
    }
}

/// Mass-weighted projections f̂(i, a) = ⟨f(t_i,·), φ_a⟩_mass.
fn project(dec: &SpectralDecomposition, f: &Signal) -> DMatrix<f64> {
    let weighted = DMatrix::from_fn(f.vertices.len(), dec.n_modes(), |k, a| {
        let v = f.vertices[k];
        dec.mass[v] * dec.eigenvectors[(v, a)]
    });
    &f.values * weighted
}

fn check_inputs(dec: &SpectralDecomposition, f: &Signal) -> Result<()> {
    f.grid.check(dec.lambda_max())?;
    if let Some(&v) = f.vertices.iter().find(|&&v| v >= dec.n_vertices()) {
        return Err(Error::Support(format!("source vertex {v} is not on the manifold")));
    }
    f.check_source()
}

pub fn solve(dec: &SpectralDecomposition, f: &Source) -> Result<WaveField> {
    check_inputs(dec, f)?;
    let grid = f.grid;
    let n = grid.n_nodes();
    let fhat = project(dec, f);
    let kern = modal_kernel(&dec.eigenvalues, &grid);
    let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..dec.n_modes())
        .into_par_iter()
        .map(|a| {
            let g = kern.displacement.column(a);
            let gv = kern.velocity.column(a);
            let src = fhat.column(a);
            let active: Vec<usize> = (0..n).filter(|&m| src[m] != 0.0).collect();
            let mut u = vec![0.0; n];
            let mut v = vec![0.0; n];
            for i in 0..n {
                let (mut su, mut sv) = (0.0, 0.0);
                for &m in active.iter().take_while(|&&m| m <= i) {
                    su += g[i - m] * src[m];
                    sv += gv[i - m] * src[m];
                }
                u[i] = su;
                v[i] = sv;
            }
            (u, v)
        })
        .collect();
    let mut modal = DMatrix::zeros(n, dec.n_modes());
    let mut vel = DMatrix::zeros(n, dec.n_modes());
    for (a, (u, v)) in cols.into_iter().enumerate() {
        modal.set_column(a, &nalgebra::DVector::from_vec(u));
        vel.set_column(a, &nalgebra::DVector::from_vec(v));
    }
    let values = &modal * dec.eigenvectors.transpose();
    Ok(WaveField { grid, values, modal: Some(modal), modal_velocity: Some(vel) })
}

/// ⟨u^ψ(T), φ_a⟩_mass for every mode, from the source alone.
pub fn modal_coefficients(dec: &SpectralDecomposition, psi: &Source, horizon: f64) -> Result<Vec<f64>> {
    check_inputs(dec, psi)?;
    let grid = psi.grid;
    let nt = grid
        .node_of(horizon)
        .ok_or_else(|| Error::Config(format!("horizon {horizon} is not a grid node")))?;
    let fhat = project(dec, psi);
    Ok((0..dec.n_modes())
        .map(|a| (0..nt).map(|m| displacement_kernel(dec.eigenvalues[a], nt - m, grid.dt) * fhat[(m, a)]).sum())
        .collect())
}

pub fn modal_coefficient(dec: &SpectralDecomposition, psi: &Source, a: usize, horizon: f64) -> Result<f64> {
    if a >= dec.n_modes() {
        return Err(Error::Config(format!("mode {a} out of range")));
    }
    check_inputs(dec, psi)?;
    let grid = psi.grid;
    let nt = grid
        .node_of(horizon)
        .ok_or_else(|| Error::Config(format!("horizon {horizon} is not a grid node")))?;
    let mut acc = 0.0;
    for m in 0..nt {
        let proj: f64 = psi
            .vertices
            .iter()
            .enumerate()
            .map(|(k, &v)| psi.values[(m, k)] * dec.mass[v] * dec.eigenvectors[(v, a)])
            .sum();
        acc += displacement_kernel(dec.eigenvalues[a], nt - m, grid.dt) * proj;
    }
    Ok(acc)
}

/// Reflection t ↦ window − t on the grid; nodes past the window become zero.
pub fn time_reverse(x: &Signal, window: f64) -> Result<Signal> {
    let k = x.grid.node_of(window).ok_or_else(|| {
        Error::Support(format!("asymmetric grid: window {window} is not a multiple of dt = {}", x.grid.dt))
    })?;
    if x.last_active_node().is_some_and(|i| i > k) {
        return Err(Error::Support(format!("signal extends past the reflection window {window}")));
    }
    let mut out = x.clone();
    out.values.fill(0.0);
    for i in 0..=k {
        out.values.set_row(i, &x.values.row(k - i));
    }
    Ok(out)
}

/// (Jψ)(t_i) = ∫_{t_i}^{2T−t_i} ψ by the step-2dt midpoint rule over the
/// nodes i+1, i+3, …, 2K−i−1 (K the node of T); zero for t_i ≥ T.
pub fn j_integrate(psi: &Signal, horizon: f64) -> Result<Signal> {
    let k = psi
        .grid
        .node_of(horizon)
        .filter(|&k| 2 * k <= psi.grid.n_steps)
        .ok_or_else(|| Error::Support(format!("J needs 2T = {} on the grid", 2.0 * horizon)))?;
    let mut out = psi.clone();
    out.values.fill(0.0);
    let two_dt = 2.0 * psi.grid.dt;
    for c in 0..psi.values.ncols() {
        let col = psi.values.column(c);
        for i in 0..k {
            let s: f64 = (i + 1..2 * k - i).step_by(2).map(|j| col[j]).sum();
            out.values[(i, c)] = two_dt * s;
        }
    }
    Ok(out)
}

/// Fraction of Σ m_v u_v² carried by vertices outside `region`.
pub fn mass_fraction_outside(m: &DiscreteManifold, u: &[f64], region: &Region) -> f64 {
    let mut total = 0.0;
    let mut outside = 0.0;
    for (v, (&x, &w)) in u.iter().zip(&m.mass).enumerate() {
        let e = w * x * x;
        total += e;
        if !region.contains(v) {
            outside += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        outside / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{build_circle, influence_domain};
    use crate::spectral::decompose;
    use std::f64::consts::PI;

    fn setup(horizon: f64) -> (DiscreteManifold, SpectralDecomposition, TimeGrid) {
        let m = build_circle(64, 2.0 * PI).unwrap();
        let dec = decompose(&m, None).unwrap();
        let g = TimeGrid::for_spectrum(horizon, dec.lambda_max(), 1.0).unwrap();
        (m, dec, g)
    }

    #[test]
    fn grid_respects_bound() {
        let (_, dec, g) = setup(3.0);
        assert_eq!(g.n_steps, 390);
        assert!(g.check(dec.lambda_max()).is_ok());
        let coarse = TimeGrid::new(3.0, 100).unwrap();
        assert!(matches!(coarse.check(dec.lambda_max()), Err(Error::TimeStep { .. })));
        assert!(TimeGrid::new(1.0, 9).is_err());
    }

    #[test]
    fn zero_source_gives_zero_field() {
        let (m, dec, g) = setup(1.0);
        let f = Signal::zeros(&Region::whole(&m), g);
        let u = solve(&dec, &f).unwrap();
        assert!(u.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_mode_source_stays_in_its_mode() {
        let (m, dec, g) = setup(1.0);
        let a = 5;
        let all = Region::whole(&m);
        let prof = |i: usize| if (2..30).contains(&i) { (i as f64 * 0.3).sin() } else { 0.0 };
        let f = Signal::from_fn(&all, g, |i, v| prof(i) * dec.eigenvectors[(v, a)]);
        let u = solve(&dec, &f).unwrap();
        let modal = u.modal.unwrap();
        for b in 0..dec.n_modes() {
            if b != a {
                assert!(modal.column(b).amax() <= 1e-12);
            }
        }
        let i = 60;
        let expect: f64 = (0..i).map(|s| displacement_kernel(dec.eigenvalues[a], i - s, g.dt) * prof(s)).sum();
        assert!((modal[(i, a)] - expect).abs() < 1e-12);
    }

    #[test]
    fn rest_at_start_and_energy_after_switch_off() {
        let (m, dec, g) = setup(1.0);
        let src = Region::disk(&m, [0.0, 0.0, 0.0], 0.3).unwrap();
        let f = Signal::from_fn(&src, g, |i, v| if (2..14).contains(&i) { ((i * 7 + v) as f64).cos() } else { 0.0 });
        let u = solve(&dec, &f).unwrap();
        assert_eq!(u.values.row(0).amax(), 0.0);
        assert!((u.values.row(1) - u.values.row(0)).amax() <= 1e-12);
        let e = u.energy(&dec.eigenvalues).unwrap();
        let e0 = e[14];
        assert!(e0 > 0.0);
        for &x in &e[14..] {
            assert!((x - e0).abs() <= 1e-8 * e0);
        }
    }

    #[test]
    fn finite_speed_on_circle() {
        let (m, dec, g) = setup(1.0);
        let src = Region::new(&m, vec![0]).unwrap();
        let stop = g.node_of(0.2).unwrap();
        let f = Signal::from_fn(&src, g, |i, _| {
            if i >= 2 && i + 1 < stop {
                (PI * g.t(i) / 0.2).sin().powi(2)
            } else {
                0.0
            }
        });
        let u = solve(&dec, &f).unwrap();
        let dom = influence_domain(&m, &src, 1.0, 2.0 * m.mesh_spacing_h).unwrap();
        let frac = mass_fraction_outside(&m, &u.at(g.horizon_node()), &dom);
        assert!(frac <= 1e-2, "fraction {frac}");
    }

    #[test]
    fn modal_coefficients_match_solve() {
        let (m, dec, g) = setup(2.0);
        let s = Region::arc(&m, 0.5, 2.0).unwrap();
        let nt = g.horizon_node();
        let f = Signal::from_fn(&s, g, |i, v| if (2..nt).contains(&i) { ((i * 13 + v * 5) as f64).sin() } else { 0.0 });
        let u = solve(&dec, &f).unwrap();
        let c = modal_coefficients(&dec, &f, 2.0).unwrap();
        let ut = u.at(nt);
        let proj = dec.modal_coefficients(&ut);
        for a in 0..dec.n_modes() {
            assert!((c[a] - proj[a]).abs() <= 1e-10 * (1.0 + proj[a].abs()));
            if a % 9 == 0 {
                assert!((modal_coefficient(&dec, &f, a, 2.0).unwrap() - c[a]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn time_reverse_rules() {
        let (m, _, g) = setup(1.0);
        let r = Region::new(&m, vec![3, 4]).unwrap();
        let x = Signal::from_fn(&r, g, |i, v| if i < 40 { (i + v) as f64 } else { 0.0 });
        let w = 2.0 * g.horizon;
        let rr = time_reverse(&time_reverse(&x, w).unwrap(), w).unwrap();
        assert_eq!(rr, x);
        let c = Signal::from_fn(&r, g, |_, _| 1.0);
        assert_eq!(time_reverse(&c, w).unwrap(), c);
        let y = time_reverse(&x, w).unwrap();
        assert_eq!(y.last_active_node(), Some(g.n_steps));
        assert!((0..=g.n_steps - 40).all(|i| y.values.row(i).amax() == 0.0));
        assert!(time_reverse(&x, 0.5 * g.dt).is_err());
    }

    #[test]
    fn j_closed_forms() {
        let (m, _, g) = setup(1.0);
        let r = Region::new(&m, vec![0]).unwrap();
        let t = g.horizon;
        let one = Signal::from_fn(&r, g, |_, _| 1.0);
        let j1 = j_integrate(&one, t).unwrap();
        let lin = Signal::from_fn(&r, g, |i, _| g.t(i));
        let jl = j_integrate(&lin, t).unwrap();
        let odd = Signal::from_fn(&r, g, |i, _| (g.t(i) - t).powi(3) + (g.t(i) - t));
        let jo = j_integrate(&odd, t).unwrap();
        for i in 0..g.n_nodes() {
            let s = g.t(i);
            let (e1, el) = if i < g.horizon_node() { (2.0 * t - 2.0 * s, ((2.0 * t - s).powi(2) - s * s) / 2.0) } else { (0.0, 0.0) };
            assert!((j1.values[(i, 0)] - e1).abs() < 1e-12);
            assert!((jl.values[(i, 0)] - el).abs() <= g.dt * g.dt);
            assert!(jo.values[(i, 0)].abs() < 1e-12);
        }
    }
}
