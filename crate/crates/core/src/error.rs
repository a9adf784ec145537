use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the meta-learning core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("model construction: {0}")]
    ModelConstruction(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite value in layer `{layer}`")]
    NumericOverflow { layer: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("memory: {0}")]
    Memory(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from non-finite arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericOverflow { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
