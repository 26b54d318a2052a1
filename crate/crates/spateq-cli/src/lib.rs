//! Config-driven runs of the spateq solvers.

pub mod commands;
pub mod config;
pub mod output;
pub mod sweep;

use config::{Mode, RunConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Budget(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Budget(_) => 2,
            CliError::Config(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<spateq::Error> for CliError {
    fn from(e: spateq::Error) -> Self {
        use spateq::Error as E;
        let msg = e.to_string();
        match e {
            E::PathBudgetExceeded { .. } => CliError::Budget(msg),
            E::Config(_)
            | E::Domain(_)
            | E::Schema { .. }
            | E::Hierarchy(_)
            | E::ApproximationInfeasible { .. }
            | E::EtaInfinite
            | E::OverflowRisk(_)
            | E::SingularWeights(_) => CliError::Config(msg),
            E::Io(_) => CliError::Io(msg),
            _ => CliError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Dispatches on the configured mode.
pub fn run(cfg: &RunConfig) -> Result<commands::Outcome, CliError> {
    match cfg.mode {
        Mode::Enumerate => commands::cmd_enumerate(cfg),
        Mode::Elasticity => commands::cmd_elasticity(cfg),
        Mode::Maclaurin => commands::cmd_maclaurin(cfg),
        Mode::Nested => commands::cmd_nested(cfg),
        Mode::Sweep => sweep::cmd_sweep(cfg),
        Mode::Bifurcate => commands::cmd_bifurcate(cfg),
        Mode::Oracle => commands::cmd_oracle(cfg),
    }
}
