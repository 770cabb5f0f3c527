//! Experiment harness: configuration, orchestration, metrics persistence,
//! aggregation, and the validation subcommands behind the `svgd-explore`
//! binary.

pub mod aggregate;
pub mod config;
pub mod manifest;
pub mod metrics;
pub mod run;
pub mod sanity;
pub mod svg;

use thiserror::Error;

/// CLI failure modes; the binary maps these onto exit codes
/// (config -> 2, runtime -> 1).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

/// Environment variable that overrides the output root.
pub const OUT_ROOT_ENV: &str = "SVGD_EXPLORE_OUT";
