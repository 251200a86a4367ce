use std::path::Path;

use idenet_core::error::{DataError, EstimatorError, ReasonError, SchemaError};
use thiserror::Error;

/// Everything a pipeline step can fail with.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    /// Malformed input file; the message carries the line and column.
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Reason(#[from] ReasonError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    pub fn parse(path: &Path, message: impl ToString) -> Self {
        Error::Parse { path: path.display().to_string(), message: message.to_string() }
    }

    /// Process exit code: 1 for failures during a run, 2 for bad input.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Estimator(EstimatorError::NonFiniteLoss { .. } | EstimatorError::Numeric(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
