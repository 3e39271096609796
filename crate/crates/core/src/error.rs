use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HgnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HgnError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{what} {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HgnError {
    pub fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        HgnError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HgnError::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation failures (bad input, bad config) as opposed to internal faults.
    pub fn is_validation(&self) -> bool {
        !matches!(self, HgnError::NonFinite(_) | HgnError::Json(_))
    }
}
