use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dropout rate {0}: must lie in [0, 1)")]
    InvalidRate(f64),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    #[error("training diverged at step {step}: non-finite value produced by `{op}`")]
    Diverged { step: usize, op: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot split {tokens} tokens into {parts} parts")]
    Partition { tokens: usize, parts: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("{0}")]
    Data(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidRate(_) => 1,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::Shape { .. } => 3,
            Error::Partition { .. }
            | Error::UndefinedCorrelation(_)
            | Error::Data(_)
            | Error::Parse { .. }
            | Error::Io { .. } => 2,
        }
    }
}
