use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero variance in column(s): {}", items.join(", "))]
    ZeroVariance { items: Vec<String> },

    #[error("matrix is singular or not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },

    #[error("covariance is singular (smallest eigenvalue {min_eigenvalue:e}); items involved: {}", items.join(", "))]
    Collinear { items: Vec<String>, min_eigenvalue: f64 },

    #[error("eigen iteration did not converge for a matrix of order {order}")]
    EigenNoConvergence { order: usize },

    #[error("non-finite objective during minimization after {iterations} iterations")]
    NonFiniteObjective { iterations: usize, last_point: Vec<f64> },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("collection failed: {0}")]
    Collection(#[from] crate::collect::TransportError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
