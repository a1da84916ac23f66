//! Generalized eigenproblem stiffness·φ = λ·mass·φ, eigenspace clusters and
//! the restricted-norm audit of eigenfunctions on a region.

mod cache;

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::hash::Hasher;
use crate::linalg::{sym_eigen_sorted, sym_min_eigenvalue};
use crate::manifold::{DiscreteManifold, Region};
use crate::{Error, Result};

pub use cache::{read_cache, write_cache};

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;
pub const DEFAULT_TAU_C: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub manifold_hash: String,
    /// Ascending, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// n_vertices × n_modes, columns mass-orthonormal.
    pub eigenvectors: DMatrix<f64>,
    pub clusters: Vec<Range<usize>>,
    pub cluster_tol: f64,
    /// Mass weights of the manifold, kept for inner products.
    pub mass: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.len()).collect()
    }

    /// Mean eigenvalue of each cluster.
    pub fn cluster_values(&self) -> Vec<f64> {
        self.clusters
            .iter()
            .map(|c| self.eigenvalues[c.clone()].iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn mode(&self, a: usize) -> nalgebra::DVectorView<'_, f64> {
        self.eigenvectors.column(a)
    }

    /// Mass inner products ⟨v, φ_a⟩ for all modes.
    pub fn modal_coefficients(&self, v: &[f64]) -> Vec<f64> {
        let mv: Vec<f64> = v.iter().zip(&self.mass).map(|(a, b)| a * b).collect();
        (0..self.n_modes())
            .map(|a| self.eigenvectors.column(a).iter().zip(&mv).map(|(p, q)| p * q).sum())
            .collect()
    }

    /// Σ_a ⟨v,φ_a⟩² against ‖v‖²_mass; zero when every mode is present.
    pub fn parseval_defect(&self, v: &[f64]) -> f64 {
        let norm2: f64 = v.iter().zip(&self.mass).map(|(a, m)| a * a * m).sum();
        let modal: f64 = self.modal_coefficients(v).iter().map(|c| c * c).sum();
        (norm2 - modal).abs() / norm2.max(f64::MIN_POSITIVE)
    }

    /// Hash over eigenvalues and eigenvectors, for provenance chains.
    pub fn hash(&self) -> String {
        let mut h = Hasher::new();
        h.str("geowave-spectral-v1").str(&self.manifold_hash);
        h.f64s(&self.eigenvalues).f64s(self.eigenvectors.as_slice());
        h.hex()
    }
}

/// Lowest `n_modes` eigenpairs (all when `None`) by dense symmetric
/// reduction M^{-1/2} K M^{-1/2}.
pub fn decompose(m: &DiscreteManifold, n_modes: Option<usize>) -> Result<SpectralDecomposition> {
    let n = m.n_vertices();
    let k = n_modes.unwrap_or(n);
    if k == 0 || k > n {
        return Err(Error::Config(format!("n_modes must be in 1..={n}, got {k}")));
    }
    let inv_sqrt: Vec<f64> = m.mass.iter().map(|x| 1.0 / x.sqrt()).collect();
    let mut a = m.stiffness.dense();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    // Exact symmetry before the solver sees it.
    let a = (&a + a.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen_sorted(a);
    let lam_max = vals.last().copied().unwrap_or(0.0).abs();
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenvectors = DMatrix::zeros(n, k);
    for c in 0..k {
        let mut lam = vals[c];
        if lam < -1e-10 * (1.0 + lam_max) {
            return Err(Error::Eigen(format!("negative eigenvalue {lam:.3e}")));
        }
        // Round-off around the constant mode.
        if lam.abs() <= 1e-11 * (1.0 + lam_max) {
            lam = 0.0;
        }
        let mut phi: Vec<f64> = (0..n).map(|i| vecs[(i, c)] * inv_sqrt[i]).collect();
        let peak = phi.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if let Some(first) = phi.iter().find(|x| x.abs() > 1e-8 * peak) {
            if *first < 0.0 {
                phi.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let kphi = m.stiffness.mul(&phi);
        let res: f64 = kphi
            .iter()
            .zip(&phi)
            .zip(&m.mass)
            .map(|((kp, p), w)| (kp - lam * w * p).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm_m: f64 = phi.iter().zip(&m.mass).map(|(p, w)| p * p * w).sum::<f64>().sqrt();
        if res > 1e-8 * (1.0 + lam) * norm_m {
            return Err(Error::Eigen(format!(
                "mode {c}: residual {res:.3e} exceeds 1e-8 (1 + {lam:.3e})"
            )));
        }
        eigenvalues.push(lam);
        eigenvectors.set_column(c, &nalgebra::DVector::from_vec(phi));
    }
    let clusters = cluster_ranges(&eigenvalues, DEFAULT_CLUSTER_TOL);
    Ok(SpectralDecomposition {
        manifold_hash: m.hash().to_string(),
        eigenvalues,
        eigenvectors,
        clusters,
        cluster_tol: DEFAULT_CLUSTER_TOL,
        mass: m.mass.clone(),
    })
}

/// Greedy split on relative gaps (λ_{i+1} − λ_i)/(1 + λ_i) > tol.
pub fn cluster_ranges(vals: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..vals.len() {
        let last = i + 1 == vals.len();
        if last || (vals[i + 1] - vals[i]) / (1.0 + vals[i]) > tol {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    out
}

pub fn cluster_eigenspaces(mut dec: SpectralDecomposition, cluster_tol: f64) -> SpectralDecomposition {
    dec.clusters = cluster_ranges(&dec.eigenvalues, cluster_tol);
    dec.cluster_tol = cluster_tol;
    dec
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBoundReport {
    pub region_size: usize,
    /// Per cluster: min of ‖e‖_{L²(S)} over unit e in the eigenspace.
    pub worst_restricted_norm: Vec<f64>,
    pub c0: f64,
    pub tau_c: f64,
    pub passed: bool,
}

/// Restricted Gram G_j = Φ_jᵀ M_S Φ_j per cluster; the worst norm is the
/// square root of its smallest eigenvalue. `max_clusters` limits the audit
/// to the lowest clusters.
pub fn condition_c_audit(
    dec: &SpectralDecomposition,
    s: &Region,
    max_clusters: Option<usize>,
    tau_c: f64,
) -> Result<SpectralBoundReport> {
    if s.is_empty() {
        return Err(Error::Geometry("condition-C audit needs a non-empty region".into()));
    }
    let n_cl = max_clusters.map_or(dec.clusters.len(), |k| k.min(dec.clusters.len()));
    let worst: Vec<f64> = dec.clusters[..n_cl]
        .par_iter()
        .map(|c| {
            let phi_s = DMatrix::from_fn(s.len(), c.len(), |i, j| {
                let v = s.vertices[i];
                dec.eigenvectors[(v, c.start + j)] * dec.mass[v].sqrt()
            });
            let g = phi_s.transpose() * &phi_s;
            sym_min_eigenvalue(&g).max(0.0).sqrt().min(1.0)
        })
        .collect();
    let min = worst.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SpectralBoundReport {
        region_size: s.len(),
        c0: 1.0 / min,
        passed: min >= tau_c,
        tau_c,
        worst_restricted_norm: worst,
    })
}
