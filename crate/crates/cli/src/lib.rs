//! Config ingestion, command dispatch and result files for the `ncdr` tool.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{execute, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
