//! Configuration-driven experiment runner for the one-shot clustered
//! learning library.

pub mod config;
pub mod points;
pub mod runner;

pub use config::{DataSpec, ExperimentConfig, IfcaInit, MethodSpec, PoolSource};
pub use runner::{collect, run_experiment, resummarize, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("no report found in {0}")]
    EmptyReport(String),
    #[error(transparent)]
    Core(#[from] odcl::Error),
}

impl CliError {
    /// Process exit code: 2 for unusable input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Config { .. } | CliError::EmptyReport(_) => 2,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }
}
