//! Command implementations behind the `batchmem` binary.
//!
//! Every command is deterministic given its config and master seed: output
//! files are byte-identical across runs (wall-clock timing goes to stderr,
//! never into an output file).

pub mod commands;
pub mod config;
pub mod plot;

use std::fmt::Display;

/// Structured failure with a machine-readable code and a process exit code:
/// 2 for usage/config problems, 3 for runtime violations.
#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn usage(code: impl Into<String>, message: impl Display) -> Self {
        Self {
            code: code.into(),
            message: message.to_string(),
            exit_code: 2,
        }
    }

    pub fn violation(code: impl Into<String>, message: impl Display) -> Self {
        Self {
            code: code.into(),
            message: message.to_string(),
            exit_code: 3,
        }
    }

    pub fn usage_from(e: impl Into<CliError>) -> Self {
        e.into()
    }

    /// The machine-readable error record printed to stderr.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": { "code": self.code, "message": self.message }
        })
        .to_string()
    }
}

impl From<batchmem::instances::InstanceError> for CliError {
    fn from(e: batchmem::instances::InstanceError) -> Self {
        CliError::usage(e.code(), e)
    }
}

impl From<batchmem::scheduler::SchedulerError> for CliError {
    fn from(e: batchmem::scheduler::SchedulerError) -> Self {
        CliError::usage(e.code(), e)
    }
}

impl From<batchmem::analysis::AnalysisError> for CliError {
    fn from(e: batchmem::analysis::AnalysisError) -> Self {
        CliError::usage(e.code(), e)
    }
}

impl From<batchmem::oracle::OracleError> for CliError {
    fn from(e: batchmem::oracle::OracleError) -> Self {
        CliError::usage(e.code(), e)
    }
}

impl From<batchmem::runtime::RuntimeError> for CliError {
    fn from(e: batchmem::runtime::RuntimeError) -> Self {
        CliError::violation(e.code(), e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::violation("Io", e)
    }
}
