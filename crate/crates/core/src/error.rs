use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structure(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("index {index} out of range for size {size}")]
    OutOfRange { index: usize, size: usize },

    #[error("network has no convolution or max-pooling layer ahead of its first weighted-sum layer")]
    NoConvolutionalPrefix,

    #[error("abstraction set is empty, nothing to refine")]
    NothingToRefine,

    #[error("invalid query: {0}")]
    Query(String),

    #[error("policy {policy} needs {missing}")]
    Policy {
        policy: &'static str,
        missing: &'static str,
    },

    #[error("LP solver failure: {0}")]
    Lp(#[from] crate::lp::LpError),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
