use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: String },

    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("methods disagree: {method} differs from the pairwise oracle by {max_abs_diff:e} at window {window}")]
    Disagreement {
        method: &'static str,
        window: usize,
        max_abs_diff: f64,
    },

    #[error("bad magic at byte 0: expected \"RDT1\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("truncated tensor file at byte {offset}: need {needed} more bytes, {available} available")]
    Truncated { offset: u64, needed: u64, available: u64 },

    #[error("invalid tensor header at byte {offset}: {reason}")]
    InvalidHeader { offset: u64, reason: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed JSON at {path}: {message}")]
    Json { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Json {
            path: path.into(),
            message: message.into(),
        }
    }
}
