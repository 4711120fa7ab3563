//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by dataset IO, model construction, training and scoring.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("I/O error on {path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt stream: {what} needs {expected} bytes but only {available} are available")]
    Corrupt {
        what: &'static str,
        expected: usize,
        available: usize,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 1 for
    /// validation/configuration problems, 2 for I/O and format problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::Degenerate(_) => 1,
            Error::Io(_)
            | Error::Path { .. }
            | Error::Format(_)
            | Error::Corrupt { .. }
            | Error::UnsupportedVersion { .. } => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
