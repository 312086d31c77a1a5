use std::path::PathBuf;

use thiserror::Error;

use crate::codes::AlistError;
use crate::lloyd::LloydQuantizer;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error(transparent)]
    Alist(#[from] AlistError),

    #[error("taping requested with solid staircase (temperature {0} <= epsilon)")]
    SolidTaping(f64),

    #[error("NaN input rejected: {0}")]
    NanInput(String),

    #[error("non-finite gradient at step {step} (parameter {index}, value {value})")]
    NanGradient { step: usize, index: usize, value: f64 },

    #[error("Lloyd iteration did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        last: Box<LloydQuantizer>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
