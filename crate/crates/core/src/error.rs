use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: malformed netpbm data at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: usize,
        reason: String,
    },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
