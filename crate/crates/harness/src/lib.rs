//! Experiment plumbing around the `svnr` library: configs, seeded runs,
//! evaluation tables and SVG figures.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod config;
pub mod plot;
pub mod records;
pub mod run;
pub mod table;

pub use config::{Algorithm, ExperimentConfig, Hyperparameters};
pub use run::{evaluate_run, run, sweep, RunOptions, RunRecord, RunSummary};
pub use table::{build_table, EvalTable};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("numerical failure for seed {seed} at episode {episode}; last good checkpoint written to {}", checkpoint.display())]
    Numerical { seed: u64, episode: usize, checkpoint: PathBuf },
    #[error(transparent)]
    Agent(#[from] svnr::agent::AgentError),
    #[error(transparent)]
    Env(#[from] svnr::envs::EnvError),
}

impl HarnessError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io(format!("{}: {e}", path.display()))
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical { .. } => 3,
            _ => 1,
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Format(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Format(e.to_string())
    }
}
