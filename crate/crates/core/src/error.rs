use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular matrix: pivot magnitude {pivot:e} at column {column}")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("matrix is not positive definite (factor step {step} gave {value:e})")]
    NotPositiveDefinite { step: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint is truncated: {0}")]
    TruncatedFile(String),

    #[error("checkpoint dimensions do not match: {0}")]
    DimMismatchOnLoad(String),

    #[error("non-finite loss at iteration {iteration}: {dump}")]
    NonFiniteLoss { iteration: usize, dump: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by user input (files, flags) rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Config(_)
                | Error::Io { .. }
                | Error::InvalidScene(_)
                | Error::InvalidSchedule(_)
                | Error::BadMagic
                | Error::TruncatedFile(_)
                | Error::DimMismatchOnLoad(_)
        )
    }
}
