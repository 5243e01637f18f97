//! Command-line front end: configuration ingestion, certification and
//! equilibrium reports, scenario simulation with CSV trajectory export.
//!
//! Exit-code contract: `0` success / certified, `1` usage or config errors,
//! `2` negative analysis outcomes (not certified, no unique equilibrium,
//! voltage collapse, stiffness failure).

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod csvio;

pub use commands::{
    cmd_certify, cmd_equilibrium, cmd_simulate, CertifyOutcome, EquilibriumOutcome, SimOverrides,
    SimulateOutcome, EXIT_NEGATIVE,
};
pub use config::{parse_config, to_document, ConfigDocument};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Semantic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error("simulate needs a [scenario] section in the config")]
    MissingScenario,
    #[error(transparent)]
    Analysis(#[from] mtdc_core::AnalysisError),
    #[error(transparent)]
    Sim(#[from] mtdc_core::SimError),
}

impl CliError {
    /// See the crate-level exit-code contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_)
            | CliError::Semantic(_)
            | CliError::Io(_)
            | CliError::Csv(_)
            | CliError::MissingScenario => 1,
            CliError::Analysis(_) | CliError::Sim(_) => EXIT_NEGATIVE,
        }
    }
}
