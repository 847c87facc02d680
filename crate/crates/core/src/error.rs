use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("dimension mismatch at {location}: {detail}")]
    DimensionMismatch { location: String, detail: String },

    #[error("matrix is not positive definite: {what}")]
    NotPositiveDefinite { what: String },

    /// The Riccati step `G_{t+1}` at stage `stage` could not be factorized as SPD.
    #[error("G matrix of stage {stage} is not positive definite")]
    IndefiniteG { stage: usize },

    #[error("reduced system at stage {stage} is inconsistent (relative out-of-range residual {residual:e})")]
    InconsistentReducedSystem { stage: usize, residual: f64 },

    #[error("boundary mismatch between batch {batch} and its successor: gap {gap:e}")]
    BoundaryMismatch { batch: usize, gap: f64 },

    #[error("KKT matrix is singular")]
    SingularKkt,

    #[error("cross-covariance between process and measurement noise is nonzero at stage {stage}")]
    UnsupportedCrossCovariance { stage: usize },

    #[error("invalid batch length {0}; must be at least 2")]
    InvalidBatchLength(usize),

    #[error("invalid horizon {0}; must be at least 1")]
    InvalidHorizon(usize),

    #[error("worker count must be at least 1")]
    InvalidWorkerCount,

    #[error("worker pool: {0}")]
    WorkerPool(String),
}

pub type Result<T, E = SolveError> = std::result::Result<T, E>;

pub(crate) fn dim_err(location: impl Into<String>, detail: impl Into<String>) -> SolveError {
    SolveError::DimensionMismatch { location: location.into(), detail: detail.into() }
}
