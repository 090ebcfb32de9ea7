use std::path::PathBuf;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// A configuration value or operation argument is out of its valid range.
    #[error("invalid `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Input data violates a precondition (class balance, window length, ...).
    #[error("{0}")]
    Data(String),

    #[error("{path}: byte offset {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Two artifacts disagree on a shape field (d, grid, clips, ...).
    #[error("incompatible {field}: {left} vs {right}")]
    Incompatible {
        field: String,
        left: String,
        right: String,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn incompatible(field: &str, left: impl ToString, right: impl ToString) -> Self {
        Error::Incompatible {
            field: field.to_string(),
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
