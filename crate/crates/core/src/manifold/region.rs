//! Vertex regions (S, R, Γ), their boundaries and the region text format.

use std::fmt::Write as _;
use std::path::Path;

use super::{geodesic_distances, DiscreteManifold};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub manifold_id: String,
    /// Sorted, unique.
    pub vertices: Vec<usize>,
    /// Vertices of the set with at least one neighbor outside it.
    pub boundary: Vec<usize>,
    /// Per boundary vertex: the outside neighbor with the largest increase
    /// of distance-to-region per unit edge length (ties: smallest index).
    pub normal_steps: Vec<usize>,
}

impl Region {
    pub fn new(m: &DiscreteManifold, mut vertices: Vec<usize>) -> Result<Self> {
        vertices.sort_unstable();
        vertices.dedup();
        if vertices.is_empty() {
            return Err(Error::Geometry("region is empty".into()));
        }
        if let Some(&v) = vertices.iter().find(|&&v| v >= m.n_vertices()) {
            return Err(Error::Geometry(format!("vertex {v} out of range")));
        }
        let mut inside = vec![false; m.n_vertices()];
        for &v in &vertices {
            inside[v] = true;
        }
        let boundary: Vec<usize> = vertices
            .iter()
            .copied()
            .filter(|&v| m.edges[v].iter().any(|&(w, _)| !inside[w]))
            .collect();
        let normal_steps = if boundary.is_empty() {
            Vec::new()
        } else {
            let d = geodesic_distances(m, &vertices);
            boundary
                .iter()
                .map(|&y| {
                    let mut best: Option<(f64, usize)> = None;
                    for &(w, len) in &m.edges[y] {
                        if inside[w] {
                            continue;
                        }
                        let rate = d.dist[w] / len;
                        if best.is_none_or(|(r, _)| rate > r) {
                            best = Some((rate, w));
                        }
                    }
                    best.map(|b| b.1).expect("boundary vertex has an outside neighbor")
                })
                .collect()
        };
        Ok(Region { manifold_id: m.id().to_string(), vertices, boundary, normal_steps })
    }

    pub fn from_predicate(m: &DiscreteManifold, pred: impl Fn(&[f64; 3]) -> bool) -> Result<Self> {
        let v = (0..m.n_vertices()).filter(|&i| pred(&m.positions[i])).collect();
        Region::new(m, v)
    }

    /// Vertices within closed-form distance `radius` of a chart point.
    pub fn disk(m: &DiscreteManifold, center: [f64; 3], radius: f64) -> Result<Self> {
        let tol = 1e-12 * (1.0 + radius);
        Region::from_predicate(m, |p| {
            m.point_distance(p, &center).is_some_and(|d| d <= radius + tol)
        })
    }

    /// Circle arc between arclength coordinates `from` and `to`, counterclockwise.
    pub fn arc(m: &DiscreteManifold, from: f64, to: f64) -> Result<Self> {
        let c = match m.kind {
            super::ManifoldKind::Circle { circumference } => circumference,
            _ => return Err(Error::Geometry("arc regions need a circle".into())),
        };
        let len = (to - from).rem_euclid(c);
        let tol = 1e-9 * c;
        Region::from_predicate(m, |p| (p[0] - from).rem_euclid(c) <= len + tol)
    }

    pub fn complement(&self, m: &DiscreteManifold) -> Result<Self> {
        let v = (0..m.n_vertices()).filter(|v| !self.contains(*v)).collect();
        Region::new(m, v)
    }

    pub fn whole(m: &DiscreteManifold) -> Self {
        Region::new(m, (0..m.n_vertices()).collect()).expect("manifold is non-empty")
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary.binary_search(&v).is_ok()
    }

    pub fn position_of(&self, v: usize) -> Option<usize> {
        self.vertices.binary_search(&v).ok()
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.vertices.iter().all(|&v| other.contains(v))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "geowave-region 1").unwrap();
        writeln!(s, "manifold {}", self.manifold_id).unwrap();
        writeln!(s, "vertices {}", self.vertices.len()).unwrap();
        writeln!(s, "{}", join(&self.vertices)).unwrap();
        writeln!(s, "boundary {}", self.boundary.len()).unwrap();
        writeln!(s, "{}", join(&self.boundary)).unwrap();
        s
    }

    /// Parses the region format. A missing boundary list is recomputed.
    pub fn from_text(m: &DiscreteManifold, text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("region file: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        if lines.next().map(str::trim) != Some("geowave-region 1") {
            return Err(bad("missing header"));
        }
        let id = lines
            .next()
            .and_then(|l| l.strip_prefix("manifold "))
            .ok_or_else(|| bad("missing manifold line"))?
            .trim()
            .to_string();
        if id != m.id() {
            return Err(Error::StaleArtifact {
                path: "region".into(),
                reason: format!("region belongs to manifold {id}, not {}", m.id()),
            });
        }
        let count = |line: Option<&str>, key: &str| -> Result<usize> {
            line.and_then(|l| l.strip_prefix(key))
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| bad(&format!("missing {key}count")))
        };
        let nv = count(lines.next(), "vertices ")?;
        let vertices = parse_list(lines.next().unwrap_or(""), nv).ok_or_else(|| bad("vertex list"))?;
        let region = Region::new(m, vertices)?;
        if let Some(line) = lines.next() {
            let nb = count(Some(line), "boundary ")?;
            let listed = parse_list(lines.next().unwrap_or(""), nb).ok_or_else(|| bad("boundary list"))?;
            if listed != region.boundary {
                return Err(bad("boundary list disagrees with the vertex set"));
            }
        }
        Ok(region)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(m: &DiscreteManifold, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Region::from_text(m, &text)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_list(line: &str, n: usize) -> Option<Vec<usize>> {
    let v: Vec<usize> = line.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    (v.len() == n).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{build_circle, build_flat_torus};

    #[test]
    fn region_text_roundtrip() {
        let m = build_flat_torus(16, 16, 1.0, 1.0).unwrap();
        let r = Region::disk(&m, [0.5, 0.5, 0.0], 0.2).unwrap();
        let back = Region::from_text(&m, &r.to_text()).unwrap();
        assert_eq!(r, back);
        for &b in &r.boundary {
            assert!(r.contains(b));
            assert!(m.edges[b].iter().any(|&(w, _)| !r.contains(w)));
        }
    }

    #[test]
    fn arc_endpoints_are_boundary() {
        let pi = std::f64::consts::PI;
        let m = build_circle(64, 2.0 * pi).unwrap();
        let r = Region::arc(&m, -pi / 4.0, pi / 4.0).unwrap();
        assert_eq!(r.len(), 17);
        assert_eq!(r.boundary, vec![8, 56]);
        assert_eq!(r.normal_steps, vec![9, 55]);
    }

    #[test]
    fn foreign_region_is_stale() {
        let a = build_flat_torus(16, 16, 1.0, 1.0).unwrap();
        let b = build_flat_torus(16, 16, 2.0, 1.0).unwrap();
        let r = Region::disk(&a, [0.5, 0.5, 0.0], 0.2).unwrap();
        assert!(matches!(Region::from_text(&b, &r.to_text()), Err(Error::StaleArtifact { .. })));
    }
}
