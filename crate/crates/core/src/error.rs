use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index {index} out of range [{lo}, {hi}] ({context})")]
    OutOfRange {
        index: usize,
        lo: usize,
        hi: usize,
        context: &'static str,
    },

    #[error("singular covariance: rank {rank} of {dim}")]
    SingularCovariance { rank: usize, dim: usize },

    #[error("undefined loss rate: {0}")]
    UndefinedRate(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(expected: usize, actual: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            actual,
            context,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
