use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected} but got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{op}: input contains non-finite values")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{0}: backward called without a recorded forward pass")]
    NoForward(&'static str),

    #[error(transparent)]
    Pnm(#[from] PnmError),

    #[error("{path}:{line}: {message}")]
    Annotation {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch} step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Binary PPM/PGM codec failures. Each malformed-input class has its own variant.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("malformed PNM header: {0}")]
    MalformedHeader(String),

    #[error("unsupported PNM maxval {0}, only 8-bit (255) is accepted")]
    UnsupportedMaxval(u32),

    #[error("truncated PNM payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("unsupported PNM magic {0:?}, expected P5 or P6")]
    UnsupportedMagic(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
