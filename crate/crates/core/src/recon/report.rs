//! Boundary-distance representation and its comparison with ground truth.

use std::fmt::Write as _;

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceRow {
    /// Vertex ids of y ∈ ∂R and z ∈ ∂R.
    pub y: usize,
    pub s: f64,
    pub z: usize,
    pub recovered: f64,
    pub truth: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceReport {
    pub rows: Vec<DistanceRow>,
    /// (y, s) addresses, one per embedded point.
    pub points: Vec<(usize, f64)>,
    pub z_samples: Vec<usize>,
    /// Recovered distance vectors (D[(y,s), z])_z after deduplication.
    pub embedding: Vec<Vec<f64>>,
    /// True distance vectors for the same kept points.
    pub oracle_embedding: Vec<Vec<f64>>,
    pub max_error: f64,
    pub mean_error: f64,
    pub hausdorff: f64,
    pub resolution_band: f64,
    /// Fraction of points merged into an earlier one.
    pub collapse_ratio: f64,
    pub warnings: Vec<String>,
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Greedy in input order: a vector is kept unless it lies within `threshold`
/// of a kept one in the sup metric.
fn dedup(vectors: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        if kept.iter().all(|&k| sup_dist(&vectors[k], v) >= threshold) {
            kept.push(i);
        }
    }
    kept
}

fn one_sided(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .map(|x| b.iter().map(|y| sup_dist(x, y)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { f64::INFINITY };
    }
    one_sided(a, b).max(one_sided(b, a))
}

/// `recovered[i][j]` and `truth[i][j]` are distances from point `points[i]`
/// to boundary sample `z_samples[j]`.
pub fn reconstruct_metric_space(
    points: &[(usize, f64)],
    z_samples: &[usize],
    recovered: &[Vec<f64>],
    truth: &[Vec<f64>],
    resolution: f64,
    resolution_band: f64,
) -> DistanceReport {
    assert_eq!(points.len(), recovered.len());
    assert_eq!(points.len(), truth.len());
    let mut rows = Vec::new();
    let mut errs = Vec::new();
    for (i, &(y, s)) in points.iter().enumerate() {
        for (j, &z) in z_samples.iter().enumerate() {
            rows.push(DistanceRow { y, s, z, recovered: recovered[i][j], truth: truth[i][j] });
            errs.push((recovered[i][j] - truth[i][j]).abs());
        }
    }
    let kept = dedup(recovered, 2.0 * resolution);
    let embedding: Vec<Vec<f64>> = kept.iter().map(|&i| recovered[i].clone()).collect();
    let oracle_embedding: Vec<Vec<f64>> = kept.iter().map(|&i| truth[i].clone()).collect();
    let true_kept = dedup(truth, 2.0 * resolution);
    let true_points: Vec<Vec<f64>> = true_kept.iter().map(|&i| truth[i].clone()).collect();
    let collapse_ratio = if points.is_empty() { 0.0 } else { 1.0 - kept.len() as f64 / points.len() as f64 };
    let mut warnings = Vec::new();
    if collapse_ratio > 0.5 {
        warnings.push(format!("{:.0}% of points collapsed in deduplication; sampling too coarse", 100.0 * collapse_ratio));
    }
    DistanceReport {
        rows,
        points: points.to_vec(),
        z_samples: z_samples.to_vec(),
        hausdorff: hausdorff(&embedding, &true_points),
        embedding,
        oracle_embedding,
        max_error: errs.iter().copied().fold(0.0, f64::max),
        mean_error: if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 },
        resolution_band,
        collapse_ratio,
        warnings,
    }
}

impl DistanceReport {
    /// Column table (y, s, z, d̂, oracle, |err|) followed by a summary block.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# y s z recovered oracle abs_err\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{} {:.6} {} {:.6} {:.6} {:.6}",
                r.y,
                r.s,
                r.z,
                r.recovered,
                r.truth,
                (r.recovered - r.truth).abs()
            );
        }
        let _ = writeln!(out, "[summary]");
        let _ = writeln!(out, "samples = {}", self.rows.len());
        let _ = writeln!(out, "points = {}", self.points.len());
        let _ = writeln!(out, "kept_points = {}", self.embedding.len());
        let _ = writeln!(out, "max_error = {:.6}", self.max_error);
        let _ = writeln!(out, "mean_error = {:.6}", self.mean_error);
        let _ = writeln!(out, "hausdorff = {:.6}", self.hausdorff);
        let _ = writeln!(out, "resolution_band = {:.6}", self.resolution_band);
        let _ = writeln!(out, "collapse_ratio = {:.4}", self.collapse_ratio);
        for w in &self.warnings {
            let _ = writeln!(out, "warning = {w}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_input_has_zero_hausdorff() {
        let pts = vec![(0, 0.1), (0, 0.2), (1, 0.1)];
        let d = vec![vec![0.1, 0.5], vec![0.2, 0.45], vec![0.4, 0.1]];
        let rep = reconstruct_metric_space(&pts, &[0, 1], &d, &d, 0.01, 0.03);
        assert_eq!(rep.hausdorff, 0.0);
        assert_eq!(rep.max_error, 0.0);
        assert_eq!(rep.embedding.len(), 3);
    }

    #[test]
    fn duplicates_collapse_and_warn() {
        let pts = vec![(0, 0.1), (0, 0.1001), (0, 0.1002)];
        let d = vec![vec![0.1, 0.2], vec![0.1001, 0.2], vec![0.1002, 0.2]];
        let rep = reconstruct_metric_space(&pts, &[0, 1], &d, &d, 0.01, 0.03);
        assert_eq!(rep.embedding.len(), 1);
        assert!(rep.collapse_ratio > 0.5 && !rep.warnings.is_empty());
    }

    #[test]
    fn shifted_points_measure_shift() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let b = vec![vec![0.1, 1.0], vec![1.0, 0.05]];
        assert!((hausdorff(&a, &b) - 0.1).abs() < 1e-15);
    }
}
