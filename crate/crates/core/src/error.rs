use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown category code `{0}`")]
    UnknownCategory(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid label `{0}`")]
    InvalidLabel(String),

    #[error("conversion failed: {0}")]
    Conversion(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty chart")]
    EmptyChart,

    #[error("sentence of length {0} is too long for exhaustive decoding (max {1})")]
    TooLong(usize, usize),

    #[error("token count mismatch: predicted graph has {pred}, gold graph has {gold}")]
    TokenMismatch { pred: usize, gold: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
