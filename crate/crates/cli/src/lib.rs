//! Experiment plumbing behind the `docwin` binary: configs, corpora in and
//! JSON/JSONL/CSV artifacts out.

pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configs or paths.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Run(#[from] docwin::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Run(_) => 3,
        }
    }
}
