use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid mesh {path}: {reason}")]
    Mesh { path: PathBuf, reason: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("normal walk stalled at arclength {reached} (requested {requested})")]
    WalkStalled { reached: f64, requested: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("time grid violates dt <= pi/(10 sqrt(lambda_max)): dt = {dt}, bound = {bound}")]
    TimeStep { dt: f64, bound: f64 },

    #[error("source support violation: {0}")]
    Support(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("stale artifact {path}: {reason}")]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("corrupted artifact {path}: {reason}")]
    Corrupted { path: PathBuf, reason: String },

    #[error("ill-conditioned Gram (estimate {0:.3e}); increase reg")]
    IllConditioned(f64),

    #[error("data access violation: {0}")]
    Access(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("recovery error: {0}")]
    Recovery(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl Error {
    /// Process exit code: 2 config, 3 missing or stale artifact, 4 failed
    /// verification or corrupted data, 5 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Mesh { .. } => 2,
            Error::MissingArtifact(_) | Error::StaleArtifact { .. } | Error::Io { .. } => 3,
            Error::Corrupted { .. } | Error::Verification(_) | Error::Access(_) => 4,
            _ => 5,
        }
    }
}
