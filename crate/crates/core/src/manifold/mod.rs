//! Discrete closed manifolds: lumped mass, stiffness (discrete -Δ), edge
//! graph, geodesic distances and domains of influence.

mod geodesic;
mod mesh;
mod region;

use nalgebra::DMatrix;

use crate::hash::Hasher;
use crate::{Error, Result};

pub use geodesic::{
    geodesic_distances, influence_domain, normal_direction, normal_geodesic_point,
    normal_geodesic_position, sigma_oracle, GeodesicTable,
};
pub use mesh::{load_mesh, parse_off};
pub use region::Region;

#[derive(Clone, Debug, PartialEq)]
pub enum ManifoldKind {
    Circle { circumference: f64 },
    FlatTorus { nx: usize, ny: usize, lx: f64, ly: f64 },
    Mesh,
}

impl ManifoldKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ManifoldKind::Circle { .. } => "circle",
            ManifoldKind::FlatTorus { .. } => "flat_torus",
            ManifoldKind::Mesh => "mesh",
        }
    }
}

/// Symmetric sparse matrix stored as sorted row lists.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            rows[i].push((j, v));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(j, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            *row = merged;
        }
        SparseSym { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                a[(i, j)] = v;
            }
        }
        a
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteManifold {
    pub kind: ManifoldKind,
    /// Chart coordinates: arclength for the circle, (x, y) for the torus,
    /// embedded xyz for meshes. Unused slots are zero.
    pub positions: Vec<[f64; 3]>,
    pub mass: Vec<f64>,
    pub stiffness: SparseSym,
    /// Adjacency with geodesic edge lengths.
    pub edges: Vec<Vec<(usize, f64)>>,
    pub mesh_spacing_h: f64,
    hash: String,
}

impl DiscreteManifold {
    fn assemble(
        kind: ManifoldKind,
        positions: Vec<[f64; 3]>,
        mass: Vec<f64>,
        stiffness: SparseSym,
        edges: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        let mesh_spacing_h = edges
            .iter()
            .flat_map(|e| e.iter().map(|&(_, l)| l))
            .fold(0.0, f64::max);
        let mut h = Hasher::new();
        h.str("geowave-manifold-v1").str(kind.tag());
        match &kind {
            ManifoldKind::Circle { circumference } => {
                h.f64(*circumference);
            }
            ManifoldKind::FlatTorus { nx, ny, lx, ly } => {
                h.u64(*nx as u64).u64(*ny as u64).f64(*lx).f64(*ly);
            }
            ManifoldKind::Mesh => {}
        }
        for p in &positions {
            h.f64s(p);
        }
        h.f64s(&mass);
        for row in &stiffness.rows {
            h.u64(row.len() as u64);
            for &(j, v) in row {
                h.u64(j as u64).f64(v);
            }
        }
        let m = DiscreteManifold {
            kind,
            positions,
            mass,
            stiffness,
            edges,
            mesh_spacing_h,
            hash: h.hex(),
        };
        if !m.is_connected() {
            return Err(Error::Geometry("edge graph is not connected".into()));
        }
        Ok(m)
    }

    pub fn n_vertices(&self) -> usize {
        self.mass.len()
    }

    /// SHA-256 over kind, parameters, positions, mass and stiffness.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn id(&self) -> &str {
        &self.hash[..16]
    }

    pub fn volume(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_vertices();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &self.edges[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    /// Upper bound on the diameter.
    pub fn diameter(&self) -> f64 {
        match self.kind {
            ManifoldKind::Circle { circumference } => circumference / 2.0,
            ManifoldKind::FlatTorus { lx, ly, .. } => 0.5 * lx.hypot(ly),
            ManifoldKind::Mesh => {
                let d = geodesic_distances(self, &[0]);
                2.0 * d.dist.iter().cloned().fold(0.0, f64::max)
            }
        }
    }

    /// Closed-form distance between chart points; `None` on meshes.
    pub fn point_distance(&self, p: &[f64; 3], q: &[f64; 3]) -> Option<f64> {
        match self.kind {
            ManifoldKind::Circle { circumference } => {
                let d = (p[0] - q[0]).rem_euclid(circumference);
                Some(d.min(circumference - d))
            }
            ManifoldKind::FlatTorus { lx, ly, .. } => {
                let dx = (p[0] - q[0]).rem_euclid(lx);
                let dy = (p[1] - q[1]).rem_euclid(ly);
                Some(dx.min(lx - dx).hypot(dy.min(ly - dy)))
            }
            ManifoldKind::Mesh => None,
        }
    }

    /// Vertex nearest to a chart point (closed-form kinds only).
    pub fn nearest_vertex(&self, p: &[f64; 3]) -> Option<usize> {
        match self.kind {
            ManifoldKind::Circle { circumference } => {
                let n = self.n_vertices();
                let k = (p[0].rem_euclid(circumference) / circumference * n as f64).round() as usize;
                Some(k % n)
            }
            ManifoldKind::FlatTorus { nx, ny, lx, ly } => {
                let i = (p[0].rem_euclid(lx) / lx * nx as f64).round() as usize % nx;
                let j = (p[1].rem_euclid(ly) / ly * ny as f64).round() as usize % ny;
                Some(i * ny + j)
            }
            ManifoldKind::Mesh => None,
        }
    }

    /// Wraps a chart point into the fundamental domain.
    pub fn wrap(&self, p: [f64; 3]) -> [f64; 3] {
        match self.kind {
            ManifoldKind::Circle { circumference } => [p[0].rem_euclid(circumference), 0.0, 0.0],
            ManifoldKind::FlatTorus { lx, ly, .. } => [p[0].rem_euclid(lx), p[1].rem_euclid(ly), 0.0],
            ManifoldKind::Mesh => p,
        }
    }

    pub fn torus_index(&self, i: isize, j: isize) -> Option<usize> {
        match self.kind {
            ManifoldKind::FlatTorus { nx, ny, .. } => {
                let i = i.rem_euclid(nx as isize) as usize;
                let j = j.rem_euclid(ny as isize) as usize;
                Some(i * ny + j)
            }
            _ => None,
        }
    }
}

pub fn build_circle(n: usize, circumference: f64) -> Result<DiscreteManifold> {
    if n < 8 {
        return Err(Error::Config(format!("circle needs n >= 8, got {n}")));
    }
    if !(circumference > 0.0) {
        return Err(Error::Config("circumference must be positive".into()));
    }
    let h = circumference / n as f64;
    let positions = (0..n).map(|i| [i as f64 * h, 0.0, 0.0]).collect();
    let mass = vec![h; n];
    let inv_h = n as f64 / circumference;
    let stiffness = SparseSym::from_triplets(
        n,
        (0..n).flat_map(|i| {
            [
                (i, i, 2.0 * inv_h),
                (i, (i + 1) % n, -inv_h),
                (i, (i + n - 1) % n, -inv_h),
            ]
        }),
    );
    let edges = (0..n)
        .map(|i| {
            let mut e = vec![((i + n - 1) % n, h), ((i + 1) % n, h)];
            e.sort_by_key(|x| x.0);
            e
        })
        .collect();
    DiscreteManifold::assemble(ManifoldKind::Circle { circumference }, positions, mass, stiffness, edges)
}

pub fn build_flat_torus(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<DiscreteManifold> {
    if nx < 8 || ny < 8 {
        return Err(Error::Config(format!("torus grid must be at least 8x8, got {nx}x{ny}")));
    }
    if !(lx > 0.0 && ly > 0.0) {
        return Err(Error::Config("torus side lengths must be positive".into()));
    }
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let idx = |i: usize, j: usize| (i % nx) * ny + (j % ny);
    let n = nx * ny;
    let mut positions = Vec::with_capacity(n);
    for i in 0..nx {
        for j in 0..ny {
            positions.push([i as f64 * hx, j as f64 * hy, 0.0]);
        }
    }
    let mass = vec![hx * hy; n];
    // Scaled so that mass^-1 * stiffness is the standard 5-point Laplacian.
    let (wx, wy) = (hy / hx, hx / hy);
    let mut trip = Vec::with_capacity(5 * n);
    let mut edges = Vec::with_capacity(n);
    for i in 0..nx {
        for j in 0..ny {
            let a = idx(i, j);
            let east = idx(i + 1, j);
            let west = idx(i + nx - 1, j);
            let north = idx(i, j + 1);
            let south = idx(i, j + ny - 1);
            trip.push((a, a, 2.0 * wx + 2.0 * wy));
            trip.push((a, east, -wx));
            trip.push((a, west, -wx));
            trip.push((a, north, -wy));
            trip.push((a, south, -wy));
            let mut e = vec![(east, hx), (west, hx), (north, hy), (south, hy)];
            e.sort_by_key(|x| x.0);
            e.dedup_by_key(|x| x.0);
            edges.push(e);
        }
    }
    let stiffness = SparseSym::from_triplets(n, trip);
    DiscreteManifold::assemble(ManifoldKind::FlatTorus { nx, ny, lx, ly }, positions, mass, stiffness, edges)
}

pub(crate) fn from_mesh_parts(
    positions: Vec<[f64; 3]>,
    mass: Vec<f64>,
    triplets: Vec<(usize, usize, f64)>,
    edges: Vec<Vec<(usize, f64)>>,
) -> Result<DiscreteManifold> {
    let n = positions.len();
    DiscreteManifold::assemble(ManifoldKind::Mesh, positions, mass, SparseSym::from_triplets(n, triplets), edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_mass_and_rows() {
        let m = build_circle(8, 2.0 * std::f64::consts::PI).unwrap();
        assert!((m.volume() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        for row in &m.stiffness.rows {
            let s: f64 = row.iter().map(|e| e.1).sum();
            assert!(s.abs() < 1e-12);
        }
        assert!(build_circle(7, 1.0).is_err());
    }

    #[test]
    fn torus_mass_and_symmetry() {
        let m = build_flat_torus(8, 8, 1.0, 1.0).unwrap();
        assert!((m.volume() - 1.0).abs() < 1e-12);
        for i in 0..m.n_vertices() {
            for &(j, v) in &m.stiffness.rows[i] {
                assert_eq!(v, m.stiffness.get(j, i));
            }
        }
        assert!(build_flat_torus(7, 8, 1.0, 1.0).is_err());
    }

    #[test]
    fn torus_point_distance_wraps() {
        let m = build_flat_torus(16, 16, 1.0, 1.0).unwrap();
        let d = m.point_distance(&[0.0, 0.0, 0.0], &[0.5, 0.5, 0.0]).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
        let d = m.point_distance(&[0.05, 0.0, 0.0], &[0.95, 0.0, 0.0]).unwrap();
        assert!((d - 0.1).abs() < 1e-12);
    }
}
