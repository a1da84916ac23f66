//! Ground-truth annotations computed from the manifold itself. Nothing here
//! goes through the data oracle; these values only score recovered output.

use crate::manifold::{
    geodesic_distances, normal_geodesic_point, normal_geodesic_position, sigma_oracle, DiscreteManifold, ManifoldKind,
    Region,
};
use crate::{Error, Result};

use super::InclusionQuery;

fn vertices_of(r: &Region, positions: &[usize]) -> Result<Vec<usize>> {
    positions
        .iter()
        .map(|&p| r.vertices.get(p).copied().ok_or_else(|| Error::Geometry(format!("R position {p} out of range"))))
        .collect()
}

/// max over x ∈ M(Γ₀, s₀) of min_k (d(x, Γ_k) − s_k): negative when the
/// inclusion holds with that much room, positive when it fails.
pub fn inclusion_margin(m: &DiscreteManifold, r: &Region, q: &InclusionQuery) -> Result<f64> {
    let d0 = geodesic_distances(m, &vertices_of(r, &q.target)?);
    let covers: Vec<(Vec<f64>, f64)> = q
        .covers
        .iter()
        .map(|(g, s)| Ok((geodesic_distances(m, &vertices_of(r, g)?).dist, *s)))
        .collect::<Result<_>>()?;
    let tol = 1e-12 * (1.0 + q.s0);
    let mut worst = f64::NEG_INFINITY;
    for x in 0..m.n_vertices() {
        if d0.dist[x] > q.s0 + tol {
            continue;
        }
        let slack = covers.iter().map(|(d, s)| d[x] - s).fold(f64::INFINITY, f64::min);
        worst = worst.max(slack);
    }
    Ok(worst)
}

/// d(γ(s; y, ν), z) for boundary vertex y of R and vertex z.
pub fn true_boundary_distance(m: &DiscreteManifold, r: &Region, y: usize, s: f64, z: usize) -> Result<f64> {
    match m.kind {
        ManifoldKind::Mesh => {
            let p = normal_geodesic_point(m, r, y, s)?;
            Ok(geodesic_distances(m, &[z]).dist[p])
        }
        _ => {
            let p = normal_geodesic_position(m, r, y, s)?;
            m.point_distance(&p, &m.positions[z]).ok_or_else(|| Error::Geometry("no closed-form distance".into()))
        }
    }
}

/// σ_R(y) for boundary vertex y.
pub fn true_sigma(m: &DiscreteManifold, r: &Region, y: usize) -> Result<f64> {
    sigma_oracle(m, r, y)
}
