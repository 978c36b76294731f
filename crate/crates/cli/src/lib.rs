//! The `askd` command line: experiment runs and sweeps, ablation suites,
//! replays, reports and the live teaching service.

pub mod args;
pub mod commands;
pub mod report;

use askdagger_core::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {error}")]
    Config { path: String, error: ConfigError },
    #[error("{0}")]
    Usage(String),
    #[error("{file}: schema error: {message}")]
    Schema { file: String, message: String },
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    /// 2 for configuration and usage errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } | Self::Usage(_) => 2,
            _ => 1,
        }
    }
}
