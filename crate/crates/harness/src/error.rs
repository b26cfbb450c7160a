use std::path::PathBuf;

use boostkit_core::CoreError;
use thiserror::Error;

use crate::metrics::RoundMetrics;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: byte {offset}: {reason}")]
    Binary { path: PathBuf, offset: usize, reason: String },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("{path}: line {line}: {reason}")]
    Record { path: PathBuf, line: usize, reason: String },
    #[error("round {round}: {source}")]
    Aborted {
        round: usize,
        #[source]
        source: CoreError,
        /// Rows of the rounds that completed before the failure.
        partial: Vec<RoundMetrics>,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
