//! Crate-wide error type with stable exit codes for the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("audio: {0}")]
    Audio(String),
    #[error("train: {0}")]
    Train(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("format: {0}")]
    Format(String),
    #[error("eval: {0}")]
    Eval(String),
}

impl CoreError {
    /// Stable machine-parsable exit code, one per error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config(_) => 2,
            CoreError::Io(_) => 3,
            CoreError::Manifest(_) => 4,
            CoreError::Audio(_) => 5,
            CoreError::Train(_) => 6,
            CoreError::Checkpoint(_) => 7,
            CoreError::Format(_) => 8,
            CoreError::Eval(_) => 9,
        }
    }

    /// Short code string printed by the CLI (`error[E05]: ...`).
    pub fn code(&self) -> String {
        format!("E{:02}", self.exit_code())
    }
}
