use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid prior specification: {0}")]
    Prior(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dense budget exceeded: {what} needs dimension {requested}, limit is {limit}")]
    DenseBudget {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("area {area} is isolated under an intrinsic prior (zero precision diagonal)")]
    IsolatedArea { area: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("output conflict: {0}")]
    OutputConflict(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 2 for input problems, 3 for output conflicts and
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::OutputConflict(_) => 3,
            Error::Numerical(_) | Error::NotPositiveDefinite(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Input {
            path: path.into(),
            message: message.into(),
        }
    }
}
