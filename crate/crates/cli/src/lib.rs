//! File formats, configuration, the HTTP backend, and pipeline orchestration
//! behind the `riskroute` binary. Everything here is std-only; the numeric
//! substance lives in the core crate.

pub mod config;
pub mod http;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod report;

use riskroute_core::icl::IclError;
use thiserror::Error;

/// Process-level failure classes, each with a fixed exit code:
/// validation 1, stage 2, backend 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("backend failure: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Stage { .. } => 2,
            CliError::Backend(_) => 3,
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError::Validation(message.into())
    }

    pub fn stage(stage: &'static str, error: impl std::fmt::Display) -> Self {
        CliError::Stage { stage, message: error.to_string() }
    }

    /// Routing errors carry the one class that must exit 3 instead of 2.
    pub fn from_icl(stage: &'static str, error: IclError) -> Self {
        match error {
            IclError::Backend(e) => CliError::Backend(e.to_string()),
            other => CliError::stage(stage, other),
        }
    }
}
