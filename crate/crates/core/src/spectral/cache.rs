//! Bit-exact binary cache of a decomposition.

use std::path::Path;

use nalgebra::DMatrix;

use super::SpectralDecomposition;
use crate::io::{Reader, Writer};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"GWSPEC\0\x01";

pub fn write_cache(dec: &SpectralDecomposition, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::new(MAGIC);
    w.str(&dec.manifold_hash);
    w.u64(dec.n_vertices() as u64);
    w.u64(dec.n_modes() as u64);
    w.f64(dec.cluster_tol);
    w.f64s(&dec.mass);
    w.f64s(&dec.eigenvalues);
    w.u64(dec.clusters.len() as u64);
    for c in &dec.clusters {
        w.u64(c.start as u64);
        w.u64(c.end as u64);
    }
    w.f64s(dec.eigenvectors.as_slice());
    w.write(path)
}

/// Reads a cache and checks it belongs to the manifold with hash
/// `expected_hash` when one is given.
pub fn read_cache(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<SpectralDecomposition> {
    let mut r = Reader::open(path.as_ref(), MAGIC)?;
    let corrupt = |r: &Reader, reason: &str| Error::Corrupted { path: r.path().to_path_buf(), reason: reason.into() };
    let manifold_hash = r.str()?;
    if let Some(h) = expected_hash {
        if h != manifold_hash {
            return Err(Error::StaleArtifact {
                path: r.path().to_path_buf(),
                reason: "spectral cache belongs to a different manifold".into(),
            });
        }
    }
    let n = r.u64()? as usize;
    let k = r.u64()? as usize;
    let cluster_tol = r.f64()?;
    let mass = r.f64s()?;
    let eigenvalues = r.f64s()?;
    if mass.len() != n || eigenvalues.len() != k {
        return Err(corrupt(&r, "inconsistent dimensions"));
    }
    let n_cl = r.u64()? as usize;
    let mut clusters = Vec::with_capacity(n_cl.min(k));
    let mut next = 0;
    for _ in 0..n_cl {
        let a = r.u64()? as usize;
        let b = r.u64()? as usize;
        if a != next || b <= a || b > k {
            return Err(corrupt(&r, "cluster ranges do not tile the modes"));
        }
        clusters.push(a..b);
        next = b;
    }
    if next != k {
        return Err(corrupt(&r, "cluster ranges do not tile the modes"));
    }
    let data = r.f64s()?;
    if data.len() != n * k {
        return Err(corrupt(&r, "eigenvector block has the wrong size"));
    }
    r.finish()?;
    Ok(SpectralDecomposition {
        manifold_hash,
        eigenvalues,
        eigenvectors: DMatrix::from_vec(n, k, data),
        clusters,
        cluster_tol,
        mass,
    })
}
