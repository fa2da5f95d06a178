use std::path::PathBuf;

use mge_core::MgeError;
use thiserror::Error;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const INPUT: i32 = 4;
    pub const IO: i32 = 5;
    pub const CORRUPT: i32 = 6;
    pub const GENERATION_FAILED: i32 = 7;
    pub const TRAINING_DIVERGED: i32 = 8;
    pub const STRUCTURAL: i32 = 9;
    pub const DEGENERATE: i32 = 10;
    pub const UNDEFINED_RATIO: i32 = 11;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in [{section}]{}: {message}", key.as_ref().map(|k| format!(" key `{k}`")).unwrap_or_default())]
    Config {
        section: String,
        key: Option<String>,
        message: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Internal(String),

    #[error(transparent)]
    Core(#[from] MgeError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => exit::CONFIG,
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { .. } => exit::IO,
            CliError::Internal(_) => exit::INTERNAL,
            CliError::Core(e) => match e {
                MgeError::ConfigRange(_) => exit::CONFIG,
                MgeError::InvalidInput(_) | MgeError::Format { .. } => exit::INPUT,
                MgeError::Storage { .. } => exit::IO,
                MgeError::Corruption { .. } | MgeError::UnsupportedVersion { .. } => exit::CORRUPT,
                MgeError::GenerationFailed { .. } => exit::GENERATION_FAILED,
                MgeError::TrainingDiverged { .. } => exit::TRAINING_DIVERGED,
                MgeError::Structural(_) => exit::STRUCTURAL,
                MgeError::DegenerateSpectrum => exit::DEGENERATE,
                MgeError::UndefinedRatio(_) => exit::UNDEFINED_RATIO,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::CONFIG => "config",
            exit::USAGE => "usage",
            exit::INPUT => "input",
            exit::IO => "io",
            exit::CORRUPT => "corrupt",
            exit::GENERATION_FAILED => "generation_failed",
            exit::TRAINING_DIVERGED => "training_diverged",
            exit::STRUCTURAL => "structural",
            exit::DEGENERATE => "degenerate_spectrum",
            exit::UNDEFINED_RATIO => "undefined_ratio",
            _ => "internal",
        }
    }

    /// One line of `key=value` fields; the message is a JSON string.
    pub fn machine_line(&self) -> String {
        let mut line = format!("mge-error code={} kind={}", self.exit_code(), self.kind());
        if let CliError::Config {
            section,
            key,
            message,
        } = self
        {
            line.push_str(&format!(" section={section}"));
            if let Some(k) = key {
                line.push_str(&format!(" key={k}"));
            }
            line.push_str(&format!(
                " message={}",
                serde_json::Value::from(message.as_str())
            ));
        } else {
            line.push_str(&format!(
                " message={}",
                serde_json::Value::from(self.to_string())
            ));
        }
        line
    }
}

pub type CliResult<T> = Result<T, CliError>;
