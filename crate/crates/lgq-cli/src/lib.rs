//! Command-line harness for the linear-Gaussian quantum estimation library:
//! scenario configuration, seeded end-to-end pipelines, CSV/JSON emission
//! and the oracle suite.

use thiserror::Error;

pub mod config;
pub mod oracle;
pub mod pipeline;
pub mod presets;

/// CLI process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_ORACLE_FAILURE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<lgq_core::Error> for CliError {
    fn from(err: lgq_core::Error) -> Self {
        match err {
            lgq_core::Error::Divergence { .. } => CliError::Divergence(err.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Io(_) => 1,
        }
    }
}
