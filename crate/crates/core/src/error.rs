use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line} ({content:?}): {message}")]
    Parse {
        line: usize,
        content: String,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("decoding error{}: {message}", block.map(|b| format!(" in block {b}")).unwrap_or_default())]
    Decoding {
        block: Option<usize>,
        message: String,
    },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn decoding(message: impl Into<String>) -> Self {
        Error::Decoding {
            block: None,
            message: message.into(),
        }
    }

    /// Attaches a block index to a decoding error; other errors pass through.
    pub(crate) fn in_block(self, index: usize) -> Self {
        match self {
            Error::Decoding {
                block: None,
                message,
            } => Error::Decoding {
                block: Some(index),
                message,
            },
            other => other,
        }
    }
}
