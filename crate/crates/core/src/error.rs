use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine, the networks or the training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing forward cache: {0}")]
    MissingCache(String),

    #[error("parameter `{0}` used before initialization")]
    Uninitialized(String),

    #[error("graph `{0}` contains a cycle or a dangling edge")]
    Cycle(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("numeric failure at epoch {epoch} iteration {iteration}: {detail}")]
    NumericAbort {
        epoch: usize,
        iteration: usize,
        detail: String,
    },

    #[error("frozen parameter group {group} changed during {phase}")]
    FreezeViolated { group: String, phase: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
