//! Everything computable from Λ_{S,R} and the local geometry of S and R.
//!
//! [`DataOracle`] is the only way in: it owns the archive and the region
//! data and records every read in an append-only access log.

mod fit;
mod l2;
mod spectrum;
mod weak;

use std::collections::BTreeSet;
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::manifold::{DiscreteManifold, GeodesicTable, Region};
use crate::wave::{j_integrate, time_reverse, Signal, Source, SourceToSolutionData, TimeGrid};
use crate::{Error, Result};

pub use fit::{controllability_fit, FitBasis, FitOutcome, FitTarget, ObservationGram, RegChoice, SparseSource};
pub use l2::{l2_bounded_test, series_verdict, L2Report, Verdict};
pub use spectrum::{recover_spectrum, Probe, RecoveredCluster, RecoveredSpectrum, SpectrumOptions};
pub use weak::{random_smooth_probes, DEFAULT_TAU_W, weak_convergence_test, ProbeDictionary, WeakReport};

/// Metric data the reconstructor is allowed to know about a region.
#[derive(Clone, Debug)]
pub struct RegionGeometry {
    pub region: Region,
    /// Mass weight per region vertex (region order).
    pub mass: Vec<f64>,
    /// Pairwise distances d_g between region vertices (region order).
    pub distances: DMatrix<f64>,
    /// Positions of the region vertices in the chart, for patch selection.
    pub positions: Vec<[f64; 3]>,
}

impl RegionGeometry {
    pub fn from_manifold(m: &DiscreteManifold, region: &Region) -> Self {
        let n = region.len();
        let mut distances = DMatrix::zeros(n, n);
        for (i, &v) in region.vertices.iter().enumerate() {
            let t: GeodesicTable = crate::manifold::geodesic_distances(m, &[v]);
            for (j, &w) in region.vertices.iter().enumerate() {
                distances[(i, j)] = t.dist[w];
            }
        }
        RegionGeometry {
            region: region.clone(),
            mass: region.vertices.iter().map(|&v| m.mass[v]).collect(),
            distances,
            positions: region.vertices.iter().map(|&v| m.positions[v]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum AccessKind {
    LambdaApply,
    LambdaKernel,
    SMass,
    RMass,
    SDistance,
    RDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccessRecord {
    pub kind: AccessKind,
    pub vertices: Vec<usize>,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub records: usize,
    pub kinds: Vec<AccessKind>,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub struct DataOracle {
    lambda: SourceToSolutionData,
    s_geometry: RegionGeometry,
    r_geometry: RegionGeometry,
    log: Mutex<Vec<AccessRecord>>,
}

impl DataOracle {
    pub fn new(lambda: SourceToSolutionData, s_geometry: RegionGeometry, r_geometry: RegionGeometry) -> Result<Self> {
        if lambda.s_vertices != s_geometry.region.vertices || lambda.r_vertices != r_geometry.region.vertices {
            return Err(Error::Access("region geometry does not match the archive's S and R".into()));
        }
        Ok(DataOracle { lambda, s_geometry, r_geometry, log: Mutex::new(Vec::new()) })
    }

    fn record(&self, kind: AccessKind, vertices: &[usize], count: u64) {
        let mut v = vertices.to_vec();
        v.sort_unstable();
        v.dedup();
        self.log.lock().expect("access log poisoned").push(AccessRecord { kind, vertices: v, count });
    }

    pub fn grid(&self) -> TimeGrid {
        self.lambda.grid
    }

    pub fn provenance(&self) -> &str {
        &self.lambda.provenance
    }

    pub fn s_region(&self) -> &Region {
        &self.s_geometry.region
    }

    pub fn r_region(&self) -> &Region {
        &self.r_geometry.region
    }

    pub fn n_s(&self) -> usize {
        self.lambda.s_vertices.len()
    }

    pub fn n_r(&self) -> usize {
        self.lambda.r_vertices.len()
    }

    pub fn s_mass(&self) -> &[f64] {
        self.record(AccessKind::SMass, &self.lambda.s_vertices, 1);
        &self.s_geometry.mass
    }

    pub fn r_mass(&self) -> &[f64] {
        self.record(AccessKind::RMass, &self.lambda.r_vertices, 1);
        &self.r_geometry.mass
    }

    /// d_g between R vertices, by region position.
    pub fn r_distances(&self) -> &DMatrix<f64> {
        self.record(AccessKind::RDistance, &self.lambda.r_vertices, 1);
        &self.r_geometry.distances
    }

    pub fn s_distances(&self) -> &DMatrix<f64> {
        self.record(AccessKind::SDistance, &self.lambda.s_vertices, 1);
        &self.s_geometry.distances
    }

    pub fn r_positions(&self) -> &[[f64; 3]] {
        self.record(AccessKind::RDistance, &self.lambda.r_vertices, 1);
        &self.r_geometry.positions
    }

    /// Λf for a source on S.
    pub fn apply(&self, f: &Source) -> Result<Signal> {
        let touched: Vec<usize> = f
            .vertices
            .iter()
            .enumerate()
            .filter(|(k, _)| f.values.column(*k).iter().any(|&x| x != 0.0))
            .map(|(_, &v)| v)
            .chain(self.lambda.r_vertices.iter().copied())
            .collect();
        self.record(AccessKind::LambdaApply, &touched, 1);
        self.lambda.apply(f)
    }

    /// Lag blocks of Λ (responses on R to unit impulses on S).
    pub fn lag_blocks(&self) -> &[DMatrix<f64>] {
        let all: Vec<usize> = self.lambda.s_vertices.iter().chain(&self.lambda.r_vertices).copied().collect();
        self.record(AccessKind::LambdaKernel, &all, self.lambda.blocks.len() as u64);
        &self.lambda.blocks
    }

    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.log.lock().expect("access log poisoned").clone()
    }

    /// Every record must be a Λ read or S/R-local geometry and touch only
    /// vertices of S ∪ R.
    pub fn audit(&self) -> AuditReport {
        let log = self.access_log();
        let allowed: BTreeSet<usize> =
            self.lambda.s_vertices.iter().chain(&self.lambda.r_vertices).copied().collect();
        let s_set: BTreeSet<usize> = self.lambda.s_vertices.iter().copied().collect();
        let r_set: BTreeSet<usize> = self.lambda.r_vertices.iter().copied().collect();
        let mut violations = Vec::new();
        let mut kinds = BTreeSet::new();
        for (i, rec) in log.iter().enumerate() {
            kinds.insert(rec.kind);
            let scope = match rec.kind {
                AccessKind::LambdaApply | AccessKind::LambdaKernel => &allowed,
                AccessKind::SMass | AccessKind::SDistance => &s_set,
                AccessKind::RMass | AccessKind::RDistance => &r_set,
            };
            if let Some(v) = rec.vertices.iter().find(|v| !scope.contains(v)) {
                violations.push(format!("record {i} ({:?}) touched vertex {v}", rec.kind));
            }
        }
        AuditReport { records: log.len(), kinds: kinds.into_iter().collect(), violations }
    }
}

fn horizon_node(grid: &TimeGrid, horizon: f64) -> Result<usize> {
    grid.node_of(horizon)
        .filter(|&k| 2 * k <= grid.n_steps)
        .ok_or_else(|| Error::Support(format!("horizon {horizon} needs 2T on the archive grid")))
}

/// ⟨u^f(T), u^h(T)⟩ from Λ alone: dt²·Σ m_r h(n,r)·[Jd(Λf)(n,r) − C2(Λ R_T f)(N−n−1, r)],
/// with Jd the step-2 window sum behind J and C2 the step-2 running sum.
pub fn blago_pair(oracle: &DataOracle, f: &Source, h: &Source, horizon: f64) -> Result<f64> {
    let grid = oracle.grid();
    let nt = horizon_node(&grid, horizon)?;
    if f.vertices != oracle.lambda.s_vertices {
        return Err(Error::Support("f must be a source on S".into()));
    }
    if h.vertices != oracle.lambda.r_vertices || h.grid != grid {
        return Err(Error::Support("h must be a source on R over the archive grid".into()));
    }
    if f.last_active_node().is_some_and(|i| i + 2 > nt) {
        return Err(Error::Support("f must be supported in (0, T)".into()));
    }
    if h.last_active_node().is_some_and(|i| i >= nt) {
        return Err(Error::Support("h must be supported in (0, T)".into()));
    }
    h.check_source()?;
    if f.is_zero() || h.is_zero() {
        return Ok(0.0);
    }
    let y = oracle.apply(f)?;
    let jy = j_integrate(&y, horizon)?;
    let z = oracle.apply(&time_reverse(f, horizon)?)?;
    let dt = grid.dt;
    let mr = oracle.r_mass();
    let mut total = 0.0;
    for (c, &w) in mr.iter().enumerate() {
        let zc = z.values.column(c);
        // c2[j] = Σ_{i ≤ j, i ≡ j mod 2} z(i)
        let mut c2 = vec![0.0; nt + 1];
        for j in 0..=nt {
            c2[j] = zc[j] + if j >= 2 { c2[j - 2] } else { 0.0 };
        }
        let mut acc = 0.0;
        for n in 0..nt {
            let hv = h.values[(n, c)];
            if hv == 0.0 {
                continue;
            }
            let jd = jy.values[(n, c)] / (2.0 * dt);
            acc += hv * (jd - c2[nt - n - 1]);
        }
        total += w * acc;
    }
    Ok(dt * dt * total)
}

/// Step-2 running sums of a lag block: ck[j] = Σ_{i ≤ j, i ≡ j mod 2} k[i].
pub(crate) fn step2_cumulative(block: &DMatrix<f64>) -> DMatrix<f64> {
    let mut ck = block.clone();
    for c in 0..ck.ncols() {
        for j in 2..ck.nrows() {
            ck[(j, c)] += ck[(j - 2, c)];
        }
    }
    ck
}

/// The pairing kernel for impulse (m, s) against impulse (n, r):
/// ⟨u^{δ_{m,s}}(T), u^{δ_{n,r}}(T)⟩ = dt²·m_r·[CK(2N−m−n−1) − CK(|m−n|−1)].
#[inline]
pub(crate) fn pair_kernel(ck: &DMatrix<f64>, r: usize, nt: usize, m: usize, n: usize) -> f64 {
    let hi = ck[(2 * nt - m - n - 1, r)];
    let d = m.abs_diff(n);
    let lo = if d >= 1 { ck[(d - 1, r)] } else { 0.0 };
    hi - lo
}

/// Pairings of u^h(T) with every canonical impulse on S:
/// A(m, k) = ⟨u^{δ_{m,s_k}}(T), u^h(T)⟩ for basis nodes m ≤ N−2 (zero elsewhere).
pub fn pairing_field(oracle: &DataOracle, h: &SparseSource, horizon: f64) -> Result<DMatrix<f64>> {
    let grid = oracle.grid();
    let nt = horizon_node(&grid, horizon)?;
    h.check(oracle.n_r(), nt)?;
    let mr = oracle.r_mass().to_vec();
    let blocks = oracle.lag_blocks();
    let dt2 = grid.dt * grid.dt;
    let mut out = DMatrix::zeros(nt + 1, blocks.len());
    for (k, b) in blocks.iter().enumerate() {
        let ck = step2_cumulative(b);
        for m in 2..nt - 1 {
            let mut acc = 0.0;
            for &(n, r, v) in &h.entries {
                acc += v * mr[r] * pair_kernel(&ck, r, nt, m, n);
            }
            out[(m, k)] = dt2 * acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::build_circle;
    use crate::spectral::decompose;
    use crate::wave::{assemble_lambda, modal_coefficients};
    use std::f64::consts::PI;

    pub(crate) fn circle_oracle(horizon: f64) -> (crate::manifold::DiscreteManifold, crate::spectral::SpectralDecomposition, DataOracle) {
        let m = build_circle(32, 2.0 * PI).unwrap();
        let dec = decompose(&m, None).unwrap();
        let g = TimeGrid::for_spectrum(horizon, dec.lambda_max(), 1.0).unwrap();
        let s = Region::arc(&m, 2.0, 4.0).unwrap();
        let r = Region::arc(&m, -0.6, 0.6).unwrap();
        let data = assemble_lambda(&dec, &s, &r, g).unwrap();
        let oracle = DataOracle::new(data, RegionGeometry::from_manifold(&m, &s), RegionGeometry::from_manifold(&m, &r)).unwrap();
        (m, dec, oracle)
    }

    fn direct(dec: &crate::spectral::SpectralDecomposition, f: &Source, h: &Source, t: f64) -> f64 {
        let a = modal_coefficients(dec, f, t).unwrap();
        let b = modal_coefficients(dec, h, t).unwrap();
        a.iter().zip(&b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn blago_matches_direct_pairing() {
        let (_, dec, oracle) = circle_oracle(2.0);
        let g = oracle.grid();
        let nt = g.horizon_node();
        let s = oracle.s_region().clone();
        let r = oracle.r_region().clone();
        let f = Signal::from_fn(&s, g, |i, v| if (2..nt - 1).contains(&i) { ((i * 3 + v * 7) as f64).sin() } else { 0.0 });
        let h = Signal::from_fn(&r, g, |i, v| if (2..nt).contains(&i) { ((i * 5 + v) as f64).cos() } else { 0.0 });
        let data_side = blago_pair(&oracle, &f, &h, g.horizon).unwrap();
        let exact = direct(&dec, &f, &h, g.horizon);
        assert!((data_side - exact).abs() <= 1e-9 * exact.abs().max(1e-300), "{data_side} vs {exact}");

        let zero = Signal::zeros(&s, g);
        assert_eq!(blago_pair(&oracle, &zero, &h, g.horizon).unwrap(), 0.0);

        let mut late = f.clone();
        late.values[(nt + 3, 0)] = 1.0;
        assert!(blago_pair(&oracle, &late, &h, g.horizon).is_err());
    }

    #[test]
    fn pairing_field_matches_blago() {
        let (_, _, oracle) = circle_oracle(1.5);
        let g = oracle.grid();
        let nt = g.horizon_node();
        let h = SparseSource { entries: vec![(nt - 5, 2, 1.0), (nt - 9, 4, -0.5), (20, 0, 0.3)] };
        let a = pairing_field(&oracle, &h, g.horizon).unwrap();
        let r = oracle.r_region().clone();
        let hs = h.to_signal(&r, g);
        let s = oracle.s_region().clone();
        for &(m, k) in &[(2usize, 0usize), (nt - 2, 3), (37, 5)] {
            let f = Signal::from_fn(&s, g, |i, v| if i == m && v == s.vertices[k] { 1.0 } else { 0.0 });
            let b = blago_pair(&oracle, &f, &hs, g.horizon).unwrap();
            assert!((a[(m, k)] - b).abs() <= 1e-12 * (1.0 + b.abs()), "m {m} k {k}: {} vs {b}", a[(m, k)]);
        }
        assert!(oracle.audit().passed());
    }

    #[test]
    fn audit_catches_foreign_vertex() {
        let (_, _, oracle) = circle_oracle(1.0);
        oracle.record(AccessKind::SMass, &[oracle.r_region().vertices[0]], 1);
        assert!(!oracle.audit().passed());
    }
}
