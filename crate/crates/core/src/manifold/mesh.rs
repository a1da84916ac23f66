//! OFF-style triangle meshes with cotangent stiffness and lumped mass.

use std::collections::BTreeMap;
use std::path::Path;

use super::{from_mesh_parts, DiscreteManifold};
use crate::{Error, Result};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<DiscreteManifold> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_off(&text).map_err(|reason| Error::Mesh { path: path.to_path_buf(), reason })
}

/// Parses an OFF file body. Errors are plain strings so callers can attach
/// the path.
pub fn parse_off(text: &str) -> std::result::Result<DiscreteManifold, String> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace())
        .peekable();
    match tokens.next() {
        Some("OFF") => {}
        other => return Err(format!("expected OFF header, found {other:?}")),
    }
    let mut next_num = |what: &str| -> std::result::Result<f64, String> {
        tokens
            .next()
            .ok_or_else(|| format!("unexpected end of file reading {what}"))?
            .parse::<f64>()
            .map_err(|e| format!("bad {what}: {e}"))
    };
    let nv = next_num("vertex count")? as usize;
    let nf = next_num("face count")? as usize;
    let _ne = next_num("edge count")?;
    let mut positions = Vec::with_capacity(nv);
    for _ in 0..nv {
        positions.push([next_num("x")?, next_num("y")?, next_num("z")?]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let k = next_num("face arity")? as usize;
        if k != 3 {
            return Err(format!("only triangles are supported, found a {k}-gon"));
        }
        let f = [
            next_num("index")? as usize,
            next_num("index")? as usize,
            next_num("index")? as usize,
        ];
        if f.iter().any(|&v| v >= nv) {
            return Err(format!("face index out of range in {f:?}"));
        }
        faces.push(f);
    }

    let mut edge_faces: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in &faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *edge_faces.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    for (&(a, b), &count) in &edge_faces {
        if count == 1 {
            return Err(format!("manifold has boundary (edge {a}-{b})"));
        }
        if count > 2 {
            return Err(format!("non-manifold edge {a}-{b} shared by {count} faces"));
        }
    }

    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    };
    let norm = |a: [f64; 3]| dot(a, a).sqrt();

    let mut mass = vec![0.0; nv];
    let mut trip = Vec::with_capacity(faces.len() * 12);
    for f in &faces {
        let p = [positions[f[0]], positions[f[1]], positions[f[2]]];
        let area = 0.5 * norm(cross(sub(p[1], p[0]), sub(p[2], p[0])));
        if area <= 0.0 {
            return Err(format!("degenerate triangle {f:?}"));
        }
        for &v in f {
            mass[v] += area / 3.0;
        }
        // Each corner contributes cot(angle)/2 to the opposite edge.
        for k in 0..3 {
            let (o, a, b) = (k, (k + 1) % 3, (k + 2) % 3);
            let u = sub(p[a], p[o]);
            let w = sub(p[b], p[o]);
            let cot = dot(u, w) / norm(cross(u, w));
            let c = 0.5 * cot;
            let (ia, ib) = (f[a], f[b]);
            trip.push((ia, ib, -c));
            trip.push((ib, ia, -c));
            trip.push((ia, ia, c));
            trip.push((ib, ib, c));
        }
    }

    let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
    for &(a, b) in edge_faces.keys() {
        let l = norm(sub(positions[a], positions[b]));
        edges[a].push((b, l));
        edges[b].push((a, l));
    }
    for e in &mut edges {
        e.sort_by_key(|x| x.0);
    }
    if mass.iter().any(|&m| m <= 0.0) {
        return Err("isolated vertex with zero mass".into());
    }
    from_mesh_parts(positions, mass, trip, edges).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    #[test]
    fn tetrahedron_loads() {
        let m = parse_off(TETRA).unwrap();
        assert_eq!(m.n_vertices(), 4);
        for row in &m.stiffness.rows {
            let s: f64 = row.iter().map(|e| e.1).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn open_fan_rejected() {
        let disk = "OFF\n4 3 0\n0 0 0\n1 0 0\n0 1 0\n-1 0 0\n3 0 1 2\n3 0 2 3\n3 0 3 1\n";
        // Closed fan around a vertex still has a free rim: boundary.
        let err = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap_err();
        assert!(err.contains("manifold has boundary"));
        assert!(parse_off(disk).unwrap_err().contains("manifold has boundary"));
    }

    #[test]
    fn non_manifold_rejected() {
        let bad = "OFF\n5 3 0\n0 0 0\n1 0 0\n0 1 0\n0 -1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 1 4\n";
        assert!(parse_off(bad).unwrap_err().contains("non-manifold"));
    }
}
