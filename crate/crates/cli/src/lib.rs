//! Batch front-end for the Hodge wave solvers.

pub mod config;
pub mod output;
pub mod run;
pub mod studies;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit status 1.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Failure inside the solver; exit status 2.
    #[error("solver failure: {0}")]
    Solver(#[from] hodge_ldgh::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Solver(_) | Self::Io(_) => 2,
        }
    }
}
