//! L²-boundedness of {u^{ψ_m}(T)} from the recovered spectrum.
//!
//! For cluster j with recovered space Ê_j ⊂ L²(S), the supremum of
//! (∫∫ s_j(t) ψ(t,x) e(x))² over e ∈ Ê_j with ‖e‖_{L²(S)} ≤ C1 is
//! C1²·‖P_j b_j‖², where b_j(x) = ∫ s_j(t) ψ(t,x) dt and P_j projects onto Ê_j.

use serde::Serialize;

use super::{horizon_node, DataOracle, RecoveredSpectrum};
use crate::wave::{displacement_kernel, Source};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Bounded,
    Unbounded,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct L2Report {
    pub verdict: Verdict,
    /// Supremum sum per sequence index.
    pub sums: Vec<f64>,
    pub budget: f64,
    /// Index of the largest sum.
    pub witness: usize,
    /// Log-log slope of the sums over the second half of the sequence.
    pub tail_slope: f64,
    pub lambda_cutoff: f64,
    pub note: String,
}

pub const BUDGET_FACTOR: f64 = 1e3;

/// Least-squares slope of ln|v| against ln(index+1) over the second half.
pub fn tail_slope(values: &[f64]) -> f64 {
    let start = values.len() / 2;
    let pts: Vec<(f64, f64)> = values[start..]
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 0.0)
        .map(|(i, v)| (((start + i + 1) as f64).ln(), v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Shared verdict rule for data-side sums and direct norms: bounded when
/// the supremum stays within BUDGET_FACTOR × the first value without a
/// super-linear tail trend, unbounded when it exceeds the budget while
/// still growing.
pub fn series_verdict(values: &[f64]) -> (Verdict, f64, usize, f64) {
    let first = values.iter().copied().find(|v| *v > 0.0).unwrap_or(0.0);
    let budget = BUDGET_FACTOR * first;
    let (witness, sup) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let slope = tail_slope(values);
    let verdict = if sup <= budget && slope <= 1.0 {
        Verdict::Bounded
    } else if sup > budget && slope > 0.0 {
        Verdict::Unbounded
    } else {
        Verdict::Inconclusive
    };
    (verdict, budget, witness, slope)
}

pub fn l2_bounded_test(
    oracle: &DataOracle,
    spectrum: &RecoveredSpectrum,
    sequence: &[Source],
    horizon: f64,
    c1: f64,
) -> Result<L2Report> {
    if !(c1 > 0.0) {
        return Err(Error::Config(format!("C1 must be positive, got {c1}")));
    }
    if sequence.is_empty() {
        return Err(Error::Config("empty source sequence".into()));
    }
    let grid = oracle.grid();
    let nt = horizon_node(&grid, horizon)?;
    let ms = oracle.s_mass().to_vec();
    let kernels: Vec<Vec<f64>> = spectrum
        .clusters
        .iter()
        .map(|c| (0..=nt).map(|m| displacement_kernel(c.lambda, nt - m, grid.dt)).collect())
        .collect();
    let mut sums = Vec::with_capacity(sequence.len());
    for psi in sequence {
        if psi.vertices != oracle.s_region().vertices || psi.grid != grid {
            return Err(Error::Support("sequence sources must live on S over the archive grid".into()));
        }
        if psi.last_active_node().is_some_and(|i| i >= nt) {
            return Err(Error::Support("sequence sources must be supported in (0, T)".into()));
        }
        let mut total = 0.0;
        for (c, g) in spectrum.clusters.iter().zip(&kernels) {
            let b: Vec<f64> = (0..ms.len())
                .map(|s| (0..nt).map(|m| g[m] * psi.values[(m, s)]).sum())
                .collect();
            for k in 0..c.basis.ncols() {
                let p: f64 = (0..ms.len()).map(|s| c.basis[(s, k)] * ms[s] * b[s]).sum();
                total += p * p;
            }
        }
        sums.push(c1 * c1 * total);
    }
    let (mut verdict, budget, witness, slope) = series_verdict(&sums);
    let mut note = String::new();
    if spectrum.rank_limited {
        verdict = Verdict::Inconclusive;
        note = format!(
            "spectrum recovery saturated the pencil; clusters above λ = {:.4} may be missing",
            spectrum.lambda_cutoff()
        );
    }
    Ok(L2Report { verdict, sums, budget, witness, tail_slope: slope, lambda_cutoff: spectrum.lambda_cutoff(), note })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_rules() {
        assert_eq!(series_verdict(&[1.0; 40]).0, Verdict::Bounded);
        let grow: Vec<f64> = (1..=64).map(|m| (m * m) as f64).collect();
        assert_eq!(series_verdict(&grow).0, Verdict::Unbounded);
        let slow: Vec<f64> = (1..=64).map(|m| (m * m) as f64).take(20).collect();
        assert_eq!(series_verdict(&slow).0, Verdict::Inconclusive);
        assert!((tail_slope(&grow) - 2.0).abs() < 1e-12);
    }
}
