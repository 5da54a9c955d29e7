use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the harness, grouped by process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// A config file or command-line value was rejected.
    #[error("{0}")]
    Config(#[from] ConfigError),

    /// Invalid arguments that are not tied to a config line.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] guided_core::Error),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for validation problems, 2 for numeric failures, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Invalid(_) => 1,
            HarnessError::Core(guided_core::Error::Numeric { .. }) => 2,
            HarnessError::Core(_) => 1,
            HarnessError::Io { .. } => 3,
        }
    }
}

/// A config problem, located by key and (when known) line.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, HarnessError>;
