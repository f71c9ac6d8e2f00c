use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric divergence in round {round}, client {client}, batch {batch}: {detail}")]
    Divergence {
        round: usize,
        client: usize,
        batch: usize,
        detail: String,
    },

    #[error("format error in {source_name} at {location}: {reason}")]
    Format {
        source_name: String,
        location: String,
        reason: String,
    },

    #[error("range error: {0}")]
    Range(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            _ => 2,
        }
    }

    /// Short machine-readable kind tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Precondition(_) => "precondition",
            Error::Shape(_) => "shape",
            Error::State(_) => "state",
            Error::Divergence { .. } => "divergence",
            Error::Format { .. } => "format",
            Error::Range(_) => "range",
            Error::Io { .. } => "io",
        }
    }
}
