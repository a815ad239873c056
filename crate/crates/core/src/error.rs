use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, unknown or outside its legal range.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Inputs have the wrong shape or violate a mathematical precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is not defined for this kind of task or knowledge.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Not enough (or malformed) data to proceed.
    #[error("data error: {0}")]
    Data(String),

    /// A training loop produced a non-finite loss.
    #[error("training diverged at episode {episode}: {reason}")]
    Training { episode: usize, reason: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A persisted artifact no longer matches the digest recorded for it.
    #[error("digest mismatch for {path}: expected {expected}, found {found}")]
    Digest {
        path: PathBuf,
        expected: String,
        found: String,
    },

    /// A persisted artifact could not be decoded.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Domain(_) => "domain",
            Error::Unsupported(_) => "unsupported",
            Error::Data(_) => "data",
            Error::Training { .. } => "training",
            Error::Io { .. } => "io",
            Error::Digest { .. } => "digest",
            Error::Format { .. } => "format",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
