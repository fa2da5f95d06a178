use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MgeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MgeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate spectrum: all coefficients are zero")]
    DegenerateSpectrum,

    #[error("config value out of range: {0}")]
    ConfigRange(String),

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(
        "generation failed: 0 of {attempts} attempts accepted \
         (best accuracy {best_accuracy:.4}, base accuracy {base_accuracy:.4})"
    )]
    GenerationFailed {
        attempts: usize,
        best_accuracy: f64,
        base_accuracy: f64,
    },

    #[error("corrupt model file {path}: {message}")]
    Corruption { path: PathBuf, message: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("time ratio undefined: trained time is {0}")]
    UndefinedRatio(f64),

    #[error("storage error on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MgeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MgeError::InvalidInput(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        MgeError::Structural(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        MgeError::ConfigRange(msg.into())
    }

    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MgeError::Storage {
            path: path.into(),
            source,
        }
    }
}
