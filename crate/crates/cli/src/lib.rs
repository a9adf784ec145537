//! Experiment runner behind the `paml` binary: configuration, orchestration,
//! output files and the lemma check.

pub mod commands;
pub mod config;
pub mod output;
pub mod runner;

use thiserror::Error;

use config::ConfigError;
use runner::RunError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Core(#[from] paml_core::Error),
}

impl CliError {
    /// 1 for usage and configuration errors, 2 for data errors, 3 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            CliError::Usage(_) | CliError::Config(_) => return 1,
            CliError::Run(e) => &e.source,
            CliError::Core(e) => e,
        };
        use paml_core::Error as E;
        match core {
            E::NumericOverflow { .. } => 3,
            E::InvalidConfig(_) | E::RejectedInput(_) | E::ModelConstruction(_) => 1,
            _ => 2,
        }
    }
}
