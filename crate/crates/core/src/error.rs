use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CcdfError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("band dimension mismatch: band 0 is {first:?}, band {band} is {other:?}")]
    BandMismatch {
        first: (usize, usize),
        band: usize,
        other: (usize, usize),
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss {value} in {stage} at batch {batch} (patch offsets {offsets:?})")]
    NonFiniteLoss {
        stage: String,
        batch: usize,
        value: f64,
        offsets: Vec<(usize, usize)>,
    },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CcdfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CcdfError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CcdfError::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        CcdfError::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CcdfError>;
