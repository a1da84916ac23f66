//! Λ_{S,R}: responses on R to the canonical source basis on S.
//!
//! The canonical basis element (node m, vertex s) is a unit hat at t_m on
//! vertex s. Its response at lag k = i − m depends on k only, so each S
//! vertex stores one lag block of (n_steps+1) × |R| values; the response of
//! every basis column is a shift of that block.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{modal_kernel, Signal, Source, TimeGrid, Trace};
use crate::hash::Hasher;
use crate::io::{Reader, Writer};
use crate::manifold::Region;
use crate::spectral::SpectralDecomposition;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"GWLAMB\0\x01";

#[derive(Clone, Debug, PartialEq)]
pub struct SourceToSolutionData {
    pub manifold_id: String,
    pub s_vertices: Vec<usize>,
    pub r_vertices: Vec<usize>,
    pub s_mass: Vec<f64>,
    pub r_mass: Vec<f64>,
    pub grid: TimeGrid,
    pub n_modes: usize,
    /// Hash of manifold, decomposition, regions and grid.
    pub provenance: String,
    /// One lag block per S vertex, (n_steps+1) × |R|.
    pub blocks: Vec<DMatrix<f64>>,
}

pub fn provenance(dec: &SpectralDecomposition, s: &Region, r: &Region, grid: &TimeGrid) -> String {
    let mut h = Hasher::new();
    h.str("geowave-lambda-v1").str(&dec.manifold_hash).str(&dec.hash());
    h.usizes(&s.vertices).usizes(&r.vertices);
    grid.feed(&mut h);
    h.hex()
}

pub fn assemble_lambda(
    dec: &SpectralDecomposition,
    s: &Region,
    r: &Region,
    grid: TimeGrid,
) -> Result<SourceToSolutionData> {
    if s.manifold_id != r.manifold_id {
        return Err(Error::Geometry("S and R live on different manifolds".into()));
    }
    if s.vertices.iter().chain(&r.vertices).any(|&v| v >= dec.n_vertices()) {
        return Err(Error::Geometry("region vertex outside the decomposition".into()));
    }
    grid.check(dec.lambda_max())?;
    let kern = modal_kernel(&dec.eigenvalues, &grid).displacement;
    let phi_r = DMatrix::from_fn(dec.n_modes(), r.len(), |a, j| dec.eigenvectors[(r.vertices[j], a)]);
    let blocks: Vec<DMatrix<f64>> = s
        .vertices
        .par_iter()
        .map(|&sv| {
            let w = dec.mass[sv];
            let mut c = phi_r.clone();
            for a in 0..dec.n_modes() {
                let f = w * dec.eigenvectors[(sv, a)];
                c.row_mut(a).scale_mut(f);
            }
            &kern * c
        })
        .collect();
    Ok(SourceToSolutionData {
        manifold_id: s.manifold_id.clone(),
        s_vertices: s.vertices.clone(),
        r_vertices: r.vertices.clone(),
        s_mass: s.vertices.iter().map(|&v| dec.mass[v]).collect(),
        r_mass: r.vertices.iter().map(|&v| dec.mass[v]).collect(),
        grid,
        n_modes: dec.n_modes(),
        provenance: provenance(dec, s, r, &grid),
        blocks,
    })
}

impl SourceToSolutionData {
    pub fn n_basis_columns(&self) -> usize {
        (self.grid.n_steps - 3) * self.s_vertices.len()
    }

    /// Response on R to basis column (node m, S position k).
    pub fn response(&self, m: usize, k: usize) -> DMatrix<f64> {
        let n = self.grid.n_nodes();
        let b = &self.blocks[k];
        DMatrix::from_fn(n, self.r_vertices.len(), |i, j| if i >= m { b[(i - m, j)] } else { 0.0 })
    }

    /// Λf for a source on S (any vertex order matching `s_vertices`).
    pub fn apply(&self, f: &Source) -> Result<Trace> {
        if f.vertices != self.s_vertices || f.grid != self.grid {
            return Err(Error::Support("source does not live on the archive's S and grid".into()));
        }
        f.check_source()?;
        let n = self.grid.n_nodes();
        let nr = self.r_vertices.len();
        let parts: Vec<DMatrix<f64>> = (0..self.s_vertices.len())
            .into_par_iter()
            .map(|k| {
                let col = f.values.column(k);
                let b = &self.blocks[k];
                let mut y = DMatrix::zeros(n, nr);
                for m in 0..n {
                    let c = col[m];
                    if c == 0.0 {
                        continue;
                    }
                    for j in 0..nr {
                        let bj = b.column(j);
                        let mut yj = y.column_mut(j);
                        for i in m..n {
                            yj[i] += c * bj[i - m];
                        }
                    }
                }
                y
            })
            .collect();
        let mut y = DMatrix::zeros(n, nr);
        for p in parts {
            y += p;
        }
        Ok(Signal {
            region_id: self.manifold_id.clone(),
            vertices: self.r_vertices.clone(),
            grid: self.grid,
            values: y,
        })
    }

    pub fn check_provenance(&self, expected: &str) -> Result<()> {
        if self.provenance != expected {
            return Err(Error::StaleArtifact {
                path: Default::default(),
                reason: "Λ archive provenance does not match the current manifold, decomposition or regions".into(),
            });
        }
        Ok(())
    }
}

pub fn write_archive(data: &SourceToSolutionData, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::new(MAGIC);
    w.str(&data.manifold_id);
    w.str(&data.provenance);
    w.f64(data.grid.horizon);
    w.u64(data.grid.n_steps as u64);
    w.u64(data.n_modes as u64);
    w.usizes(&data.s_vertices);
    w.usizes(&data.r_vertices);
    w.f64s(&data.s_mass);
    w.f64s(&data.r_mass);
    for b in &data.blocks {
        w.f64s(b.as_slice());
    }
    w.write(path)
}

/// Reloads an archive; with `expected_provenance` set, a mismatch is a
/// stale-artifact error.
pub fn read_archive(path: impl AsRef<Path>, expected_provenance: Option<&str>) -> Result<SourceToSolutionData> {
    let mut r = Reader::open(path.as_ref(), MAGIC)?;
    let manifold_id = r.str()?;
    let provenance = r.str()?;
    if let Some(p) = expected_provenance {
        if p != provenance {
            return Err(Error::StaleArtifact {
                path: r.path().to_path_buf(),
                reason: "Λ archive provenance does not match the current inputs".into(),
            });
        }
    }
    let horizon = r.f64()?;
    let n_steps = r.u64()? as usize;
    let grid = TimeGrid::new(horizon, n_steps)
        .map_err(|e| Error::Corrupted { path: r.path().to_path_buf(), reason: e.to_string() })?;
    let n_modes = r.u64()? as usize;
    let s_vertices = r.usizes()?;
    let r_vertices = r.usizes()?;
    let s_mass = r.f64s()?;
    let r_mass = r.f64s()?;
    if s_mass.len() != s_vertices.len() || r_mass.len() != r_vertices.len() {
        return Err(Error::Corrupted { path: r.path().to_path_buf(), reason: "mass lists do not match regions".into() });
    }
    let mut blocks = Vec::with_capacity(s_vertices.len());
    for _ in 0..s_vertices.len() {
        let v = r.f64s()?;
        if v.len() != grid.n_nodes() * r_vertices.len() {
            return Err(Error::Corrupted { path: r.path().to_path_buf(), reason: "response block has the wrong size".into() });
        }
        blocks.push(DMatrix::from_vec(grid.n_nodes(), r_vertices.len(), v));
    }
    r.finish()?;
    Ok(SourceToSolutionData { manifold_id, s_vertices, r_vertices, s_mass, r_mass, grid, n_modes, provenance, blocks })
}
