use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance {index} is not positive semi-definite (min eigenvalue {min_eigenvalue})")]
    NotPsd { index: usize, min_eigenvalue: f64 },

    #[error("covariance {index} is not symmetric")]
    NotSymmetric { index: usize },

    #[error("{path}: {reason}")]
    Io { path: String, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("no data rows")]
    NoData,

    #[error("insufficient data: need {needed} examples, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("solver did not converge after {iterations} iterations (primal residual {primal}, dual residual {dual})")]
    NoConvergence {
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    #[error("missing {0}")]
    Missing(&'static str),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
