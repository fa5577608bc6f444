//! Error type shared across the crate.

use std::path::PathBuf;

/// Everything that can go wrong in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value was outside its documented domain (bad diameter, bad σ, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Tensor or layer shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The caller used an API out of order or with an unusable argument.
    #[error("usage error: {0}")]
    Usage(String),

    /// A test specification cannot be satisfied (e.g. rule runs out of values).
    #[error("cannot generate test: {0}")]
    Generation(String),

    /// Training diverged; `which` names the offending loss.
    #[error("non-finite {which} loss at step {step}")]
    NonFinite { step: u64, which: &'static str },

    /// An underlying I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents are not what they claim to be.
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
