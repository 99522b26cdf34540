//! Experiment driver: configs in, `report.json` and CSV/field artifacts out.

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

pub use commands::run;
pub use config::{ExperimentConfig, Kind};
pub use report::RunReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("compute: {0}")]
    Compute(String),
}

impl From<caloric_core::Error> for CliError {
    fn from(e: caloric_core::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}
