//! Run configuration: a single TOML file with a schema version. Every field
//! has a default, and `RunConfig::default().to_toml()` prints them all.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::manifold::{build_circle, build_flat_torus, load_mesh, DiscreteManifold, ManifoldKind, Region};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema: u32,
    /// Seed for every randomized probe and trial source.
    pub seed: u64,
    /// Report directory.
    pub out: PathBuf,
    pub manifold: ManifoldSpec,
    pub s: RegionSpec,
    pub r: RegionSpec,
    pub time: TimeSpec,
    pub tolerances: Tolerances,
    pub sampling: Sampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    Circle { n: usize, circumference: f64 },
    Torus { nx: usize, ny: usize, lx: f64, ly: f64 },
    Mesh { path: PathBuf },
}

/// Chart coordinates: arclength on the circle, (x, y) on the torus and
/// mesh (z ignored).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    Whole,
    Arc { from: f64, to: f64 },
    Disk { center: [f64; 2], radius: f64 },
    /// Vertices at distance ≥ radius from the center.
    OutsideDisk { center: [f64; 2], radius: f64 },
    Box { min: [f64; 2], max: [f64; 2] },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    /// T; the archive covers (0, 2T).
    pub horizon: f64,
    /// dt = safety · π / (10 √λ_max), rounded so that 2T is a whole number of even steps.
    pub dt_safety: f64,
    /// Number of modes kept; 0 keeps all.
    pub modes: usize,
    /// Upper bound for max_x d(x, S); recovery refuses to run when T does not exceed it.
    /// 0 skips the check.
    pub radius_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub adjoint: f64,
    pub blago: f64,
    pub modal: f64,
    pub spectrum_lambda: f64,
    pub spectrum_angle: f64,
    /// Clusters compared in the spectrum suite.
    pub spectrum_clusters: usize,
    /// Audit threshold for min ‖e‖_{L²(S)} per cluster.
    pub condition_c: f64,
    /// Clusters audited; 0 audits all.
    pub condition_c_clusters: usize,
    /// Relative residual threshold of inclusion tests.
    pub inclusion: f64,
    /// Tikhonov weight relative to the mean Gram diagonal.
    pub reg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    /// Random (f, h) pairs in the adjoint and pairing suites.
    pub suite_pairs: usize,
    /// Random sources in the modal suite.
    pub modal_sources: usize,
    /// Boundary vertices of R used as y; 0 uses all.
    pub y_samples: usize,
    /// Boundary vertices of R used as z; 0 uses all.
    pub z_samples: usize,
    /// First s sample, in mesh spacings.
    pub s_min_steps: f64,
    /// s spacing, in mesh spacings.
    pub s_step_steps: f64,
    /// Random trial sources per inclusion query.
    pub trial_sources: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA_VERSION,
            seed: 0,
            out: PathBuf::from("geowave-run"),
            manifold: ManifoldSpec::Circle { n: 64, circumference: std::f64::consts::TAU },
            s: RegionSpec::Arc { from: 0.6 * std::f64::consts::PI, to: 1.4 * std::f64::consts::PI },
            r: RegionSpec::Arc { from: -std::f64::consts::FRAC_PI_4, to: std::f64::consts::FRAC_PI_4 },
            time: TimeSpec::default(),
            tolerances: Tolerances::default(),
            sampling: Sampling::default(),
        }
    }
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { horizon: 3.5, dt_safety: 1.0, modes: 0, radius_bound: 0.0 }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            adjoint: 1e-6,
            blago: 1e-6,
            modal: 1e-8,
            spectrum_lambda: 1e-3,
            spectrum_angle: 1e-2,
            spectrum_clusters: 5,
            condition_c: crate::spectral::DEFAULT_TAU_C,
            condition_c_clusters: 50,
            inclusion: 1e-3,
            reg: 1e-6,
        }
    }
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            suite_pairs: 20,
            modal_sources: 100,
            y_samples: 0,
            z_samples: 0,
            s_min_steps: 4.0,
            s_step_steps: 2.0,
            trial_sources: 8,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        if let ManifoldSpec::Mesh { path } = &mut cfg.manifold {
            *path = base.join(&*path);
        }
        for spec in [&mut cfg.s, &mut cfg.r] {
            if let RegionSpec::File { path } = spec {
                *path = base.join(&*path);
            }
        }
        Ok(cfg)
    }

    /// Panics on a seed above i64::MAX, which TOML cannot hold; `validate`
    /// rejects those.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("schema {} is not supported (expected {SCHEMA_VERSION})", self.schema));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds the TOML integer range (max {})", self.seed, i64::MAX));
        }
        let t = &self.time;
        if !(t.horizon > 0.0 && t.horizon.is_finite()) {
            return bad(format!("T must be positive, got {}", t.horizon));
        }
        if !(t.dt_safety > 0.0 && t.dt_safety <= 1.0) {
            return bad(format!("dt_safety must be in (0, 1], got {}", t.dt_safety));
        }
        if !(t.radius_bound >= 0.0) {
            return bad(format!("radius_bound must be non-negative, got {}", t.radius_bound));
        }
        let tol = &self.tolerances;
        for (name, v) in [
            ("adjoint", tol.adjoint),
            ("blago", tol.blago),
            ("modal", tol.modal),
            ("spectrum_lambda", tol.spectrum_lambda),
            ("spectrum_angle", tol.spectrum_angle),
            ("inclusion", tol.inclusion),
            ("reg", tol.reg),
        ] {
            if !(v > 0.0) {
                return bad(format!("tolerance {name} must be positive, got {v}"));
            }
        }
        let s = &self.sampling;
        if s.suite_pairs == 0 || s.modal_sources == 0 {
            return bad("suite sample counts must be positive".into());
        }
        if !(s.s_min_steps > 0.0 && s.s_step_steps > 0.0) {
            return bad("s-grid parameters must be positive".into());
        }
        Ok(())
    }

    pub fn build_manifold(&self) -> Result<DiscreteManifold> {
        match &self.manifold {
            ManifoldSpec::Circle { n, circumference } => build_circle(*n, *circumference),
            ManifoldSpec::Torus { nx, ny, lx, ly } => build_flat_torus(*nx, *ny, *lx, *ly),
            ManifoldSpec::Mesh { path } => load_mesh(path).map_err(|e| match e {
                Error::Io { path, source } => Error::Config(format!("cannot read mesh {}: {source}", path.display())),
                e => e,
            }),
        }
    }

    pub fn n_modes(&self) -> Option<usize> {
        (self.time.modes > 0).then_some(self.time.modes)
    }
}

impl RegionSpec {
    pub fn build(&self, m: &DiscreteManifold) -> Result<Region> {
        let point = |c: &[f64; 2]| [c[0], c[1], 0.0];
        let region = match self {
            RegionSpec::Whole => Region::whole(m),
            RegionSpec::Arc { from, to } => {
                if !matches!(m.kind, ManifoldKind::Circle { .. }) {
                    return Err(Error::Config("arc regions need a circle".into()));
                }
                Region::arc(m, *from, *to)?
            }
            RegionSpec::Disk { center, radius } => Region::disk(m, point(center), *radius)?,
            RegionSpec::OutsideDisk { center, radius } => {
                let c = point(center);
                let tol = 1e-12 * (1.0 + radius);
                Region::from_predicate(m, |p| m.point_distance(p, &c).is_some_and(|d| d >= radius - tol))?
            }
            RegionSpec::Box { min, max } => Region::from_predicate(m, |p| {
                (min[0]..=max[0]).contains(&p[0]) && (min[1]..=max[1]).contains(&p[1])
            })?,
            RegionSpec::File { path } => Region::read(m, path)?,
        };
        if region.is_empty() {
            return Err(Error::Config(format!("region {self:?} selects no vertices")));
        }
        Ok(region)
    }
}
