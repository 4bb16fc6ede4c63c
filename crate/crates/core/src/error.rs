use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("PLY schema error: missing property `{0}`")]
    MissingProperty(String),

    #[error("PLY format error: {0}")]
    PlyFormat(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported container: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Data,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::DimensionMismatch { .. } => {
                ErrorKind::Config
            }
            Error::Io(_) => ErrorKind::Io,
            Error::MissingProperty(_)
            | Error::PlyFormat(_)
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Corrupt(_)
            | Error::Integrity(_)
            | Error::Diverged { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }
}
