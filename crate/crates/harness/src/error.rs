use std::path::PathBuf;

use mvgc_core::ideal::IdealError;
use mvgc_core::numerics::NumericError;
use mvgc_core::scenegen::SceneError;
use mvgc_core::solver::SolveError;
use mvgc_core::ter::TerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid covariance for joint {joint}: {reason}")]
    InvalidCovariance { joint: usize, reason: String },
    #[error("{path}: invalid `{field}`: {reason}")]
    Validation { path: String, field: String, reason: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Ideal(#[from] IdealError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Ter(#[from] TerError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
