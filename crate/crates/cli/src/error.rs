use std::fmt::Display;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Numerical(#[from] schmidt_tns::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(e: impl Display) -> Self {
        Self::Config(e.to_string())
    }

    pub fn checkpoint(path: impl Display, message: impl Display) -> Self {
        Self::Checkpoint {
            path: path.to_string(),
            message: message.to_string(),
        }
    }

    /// Process exit status: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Checkpoint { .. } => "checkpoint",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }
}
