//! Experiment harness: configuration, training runs, controller comparisons,
//! rollouts with contact logs, and QP dumps.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod report;
pub mod scenarios;
pub mod train;

pub use config::{ControllerKind, RunConfig};

/// Usage errors exit with 1, everything that fails while running with 2.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}
