//! Distances, domains of influence and boundary normal geodesics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{DiscreteManifold, ManifoldKind, Region};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GeodesicTable {
    pub source: Vec<usize>,
    pub dist: Vec<f64>,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Distances from a vertex set. Closed-form on the circle and torus,
/// multi-source Dijkstra on the edge graph for meshes.
pub fn geodesic_distances(m: &DiscreteManifold, src: &[usize]) -> GeodesicTable {
    assert!(!src.is_empty(), "geodesic source set must be non-empty");
    let n = m.n_vertices();
    let dist = match m.kind {
        ManifoldKind::Mesh => {
            let mut dist = vec![f64::INFINITY; n];
            let mut heap = BinaryHeap::new();
            for &s in src {
                dist[s] = 0.0;
                heap.push(Item(0.0, s));
            }
            while let Some(Item(d, v)) = heap.pop() {
                if d > dist[v] {
                    continue;
                }
                for &(w, len) in &m.edges[v] {
                    let nd = d + len;
                    if nd < dist[w] {
                        dist[w] = nd;
                        heap.push(Item(nd, w));
                    }
                }
            }
            dist
        }
        _ => {
            let mut inside = vec![false; n];
            for &s in src {
                inside[s] = true;
            }
            (0..n)
                .map(|x| {
                    if inside[x] {
                        return 0.0;
                    }
                    src.iter()
                        .map(|&s| m.point_distance(&m.positions[x], &m.positions[s]).unwrap())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect()
        }
    };
    GeodesicTable { source: src.to_vec(), dist }
}

/// Vertex set of M(Γ, s) = {x : d(x, Γ) ≤ s + slack}.
pub fn influence_domain(m: &DiscreteManifold, gamma: &Region, s: f64, slack: f64) -> Result<Region> {
    if s < 0.0 {
        return Err(Error::Geometry(format!("negative influence radius {s}")));
    }
    let d = geodesic_distances(m, &gamma.vertices);
    let lim = s + slack;
    let tol = 1e-12 * (1.0 + lim);
    let v = (0..m.n_vertices()).filter(|&x| d.dist[x] <= lim + tol).collect();
    Region::new(m, v)
}

/// Minimum-image displacement from `p` to `q` in chart coordinates.
fn displacement(m: &DiscreteManifold, p: &[f64; 3], q: &[f64; 3]) -> [f64; 3] {
    let wrap = |d: f64, l: f64| d - l * (d / l).round();
    match m.kind {
        ManifoldKind::Circle { circumference } => [wrap(q[0] - p[0], circumference), 0.0, 0.0],
        ManifoldKind::FlatTorus { lx, ly, .. } => [wrap(q[0] - p[0], lx), wrap(q[1] - p[1], ly), 0.0],
        ManifoldKind::Mesh => [q[0] - p[0], q[1] - p[1], q[2] - p[2]],
    }
}

/// Unit outward normal at a boundary vertex of Γ on the circle or torus:
/// the direction away from the centroid of Γ's vertices within 3h of y.
/// Falls back to the discrete normal step when that centroid is y itself.
pub fn normal_direction(m: &DiscreteManifold, gamma: &Region, y: usize) -> Result<[f64; 3]> {
    let k = gamma
        .boundary
        .binary_search(&y)
        .map_err(|_| Error::Geometry(format!("vertex {y} is not on the region boundary")))?;
    let py = m.positions[y];
    let radius = 3.0 * m.mesh_spacing_h;
    let mut c = [0.0; 3];
    let mut count = 0usize;
    for &g in &gamma.vertices {
        let d = displacement(m, &py, &m.positions[g]);
        if (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() <= radius + 1e-12 {
            for i in 0..3 {
                c[i] += d[i];
            }
            count += 1;
        }
    }
    let mut v = [-c[0] / count as f64, -c[1] / count as f64, -c[2] / count as f64];
    let mut norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm < 1e-9 * m.mesh_spacing_h {
        v = displacement(m, &py, &m.positions[gamma.normal_steps[k]]);
        norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    }
    Ok([v[0] / norm, v[1] / norm, v[2] / norm])
}

/// Chart point at arclength `s` along the straight normal geodesic
/// (circle and torus only).
pub fn normal_geodesic_position(m: &DiscreteManifold, gamma: &Region, y: usize, s: f64) -> Result<[f64; 3]> {
    if matches!(m.kind, ManifoldKind::Mesh) {
        return Err(Error::Geometry("closed-form normal geodesics need a circle or torus".into()));
    }
    let nu = normal_direction(m, gamma, y)?;
    let p = m.positions[y];
    Ok(m.wrap([p[0] + s * nu[0], p[1] + s * nu[1], p[2] + s * nu[2]]))
}

/// Greedy steepest-ascent walk of distance-to-Γ on a mesh. Returns the
/// visited vertices with their arclengths.
fn mesh_walk(m: &DiscreteManifold, gamma: &Region, y: usize, s: f64) -> Result<Vec<(usize, f64)>> {
    let k = gamma
        .boundary
        .binary_search(&y)
        .map_err(|_| Error::Geometry(format!("vertex {y} is not on the region boundary")))?;
    let d = geodesic_distances(m, &gamma.vertices);
    let mut path = vec![(y, 0.0)];
    if s <= 0.0 {
        return Ok(path);
    }
    let first = gamma.normal_steps[k];
    let len0 = m.edges[y].iter().find(|e| e.0 == first).unwrap().1;
    path.push((first, len0));
    let (mut v, mut arc) = (first, len0);
    while arc < s {
        let mut best: Option<(f64, usize, f64)> = None;
        for &(w, len) in &m.edges[v] {
            let rate = (d.dist[w] - d.dist[v]) / len;
            if rate > 1e-12 && best.is_none_or(|(r, _, _)| rate > r) {
                best = Some((rate, w, len));
            }
        }
        match best {
            Some((_, w, len)) => {
                v = w;
                arc += len;
                path.push((v, arc));
            }
            None => return Err(Error::WalkStalled { reached: arc, requested: s }),
        }
    }
    Ok(path)
}

/// Vertex nearest to γ(s; y, ν).
pub fn normal_geodesic_point(m: &DiscreteManifold, gamma: &Region, y: usize, s: f64) -> Result<usize> {
    if s < 0.0 {
        return Err(Error::Geometry(format!("negative arclength {s}")));
    }
    match m.kind {
        ManifoldKind::Mesh => {
            let path = mesh_walk(m, gamma, y, s)?;
            let best = path
                .iter()
                .min_by(|a, b| (a.1 - s).abs().total_cmp(&(b.1 - s).abs()))
                .unwrap();
            Ok(best.0)
        }
        _ => {
            if s == 0.0 {
                return Ok(y);
            }
            let p = normal_geodesic_position(m, gamma, y, s)?;
            Ok(m.nearest_vertex(&p).unwrap())
        }
    }
}

/// Ground-truth cut time: the last arclength (grid step h/4) before
/// |d(γ(s), Γ) − s| first exceeds 2h.
pub fn sigma_oracle(m: &DiscreteManifold, gamma: &Region, y: usize) -> Result<f64> {
    let h = m.mesh_spacing_h;
    let tol = 2.0 * h;
    match m.kind {
        ManifoldKind::Mesh => {
            let d = geodesic_distances(m, &gamma.vertices);
            let bound = 2.0 * m.diameter();
            let path = match mesh_walk(m, gamma, y, bound) {
                Ok(p) => p,
                Err(Error::WalkStalled { reached, .. }) => mesh_walk(m, gamma, y, reached)?,
                Err(e) => return Err(e),
            };
            let mut last = 0.0;
            for &(v, arc) in &path {
                if (d.dist[v] - arc).abs() > tol {
                    break;
                }
                last = arc;
            }
            Ok(last)
        }
        _ => {
            let step = h / 4.0;
            let nu = normal_direction(m, gamma, y)?;
            let p0 = m.positions[y];
            let n_steps = (2.0 * m.diameter() / step).ceil() as usize;
            let mut last = 0.0;
            for i in 1..=n_steps {
                let s = i as f64 * step;
                let p = m.wrap([p0[0] + s * nu[0], p0[1] + s * nu[1], p0[2] + s * nu[2]]);
                let d = gamma
                    .vertices
                    .iter()
                    .map(|&g| m.point_distance(&p, &m.positions[g]).unwrap())
                    .fold(f64::INFINITY, f64::min);
                if (d - s).abs() > tol {
                    break;
                }
                last = s;
            }
            Ok(last)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{build_circle, build_flat_torus};
    use std::f64::consts::PI;

    #[test]
    fn circle_antipode() {
        let m = build_circle(64, 2.0 * PI).unwrap();
        let d = geodesic_distances(&m, &[0]);
        assert!((d.dist[32] - PI).abs() < 1e-12);
    }

    #[test]
    fn torus_diagonal() {
        let m = build_flat_torus(16, 16, 1.0, 1.0).unwrap();
        let d = geodesic_distances(&m, &[0]);
        let v = m.torus_index(8, 8).unwrap();
        assert!((d.dist[v] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn whole_set_is_zero() {
        let m = build_flat_torus(8, 8, 1.0, 1.0).unwrap();
        let all: Vec<usize> = (0..64).collect();
        assert!(geodesic_distances(&m, &all).dist.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn arc_influence() {
        let m = build_circle(64, 2.0 * PI).unwrap();
        let g = Region::arc(&m, 0.0, PI / 4.0).unwrap();
        let dom = influence_domain(&m, &g, PI / 4.0, 0.0).unwrap();
        let expect = Region::arc(&m, -PI / 4.0, PI / 2.0).unwrap();
        assert_eq!(dom.vertices, expect.vertices);
        assert_eq!(influence_domain(&m, &g, 0.0, 0.0).unwrap().vertices, g.vertices);
        assert_eq!(influence_domain(&m, &g, PI, 0.0).unwrap().len(), 64);
        assert!(influence_domain(&m, &g, -1.0, 0.0).is_err());
    }

    #[test]
    fn torus_normal_point() {
        let m = build_flat_torus(32, 32, 1.0, 1.0).unwrap();
        let g = Region::disk(&m, [0.5, 0.5, 0.0], 0.2).unwrap();
        let y = m.nearest_vertex(&[0.7, 0.5, 0.0]).unwrap();
        assert!(g.is_boundary(y));
        let v = normal_geodesic_point(&m, &g, y, 0.3).unwrap();
        assert_eq!(v, m.nearest_vertex(&[1.0, 0.5, 0.0]).unwrap());
        assert_eq!(normal_geodesic_point(&m, &g, y, 0.0).unwrap(), y);
    }

    #[test]
    fn circle_quarter_turn() {
        let m = build_circle(64, 2.0 * PI).unwrap();
        let g = Region::arc(&m, -PI / 4.0, PI / 4.0).unwrap();
        let v = normal_geodesic_point(&m, &g, 8, PI / 2.0).unwrap();
        assert_eq!(v, 24);
    }

    #[test]
    fn sigma_circle_and_torus() {
        let m = build_circle(64, 2.0 * PI).unwrap();
        let a = PI / 4.0;
        let g = Region::arc(&m, -a, a).unwrap();
        let h = m.mesh_spacing_h;
        for &y in &g.boundary {
            let s = sigma_oracle(&m, &g, y).unwrap();
            assert!((s - (PI - a)).abs() <= 2.0 * h, "sigma {s}");
        }
        let t = build_flat_torus(32, 32, 1.0, 1.0).unwrap();
        let disk = Region::disk(&t, [0.5, 0.5, 0.0], 0.1).unwrap();
        // Radial rays from the disk center leave the fundamental square
        // (the cut locus of the center) at 0.5 / max(|cos|, |sin|).
        for &y in &disk.boundary {
            let s = sigma_oracle(&t, &disk, y).unwrap();
            let (dx, dy) = (t.positions[y][0] - 0.5, t.positions[y][1] - 0.5);
            let r = dx.hypot(dy);
            let expect = 0.5 * r / dx.abs().max(dy.abs()) - r;
            assert!((s - expect).abs() <= 2.0 * t.mesh_spacing_h, "y {y} sigma {s} expect {expect}");
        }
    }
}
