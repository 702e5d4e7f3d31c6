use std::path::PathBuf;

/// Errors raised anywhere in the censoring toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point cloud has zero spread: all points coincide")]
    ZeroSpread,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("integrity error at {}: {msg}", path.display())]
    Integrity { path: PathBuf, msg: String },

    #[error("non-finite loss at step {step}: {row}")]
    NonFinite { step: usize, row: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn integrity(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
