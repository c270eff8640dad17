//! Experiment harness behind the `fairdummies` binary: configuration,
//! the per-repetition pipeline and the subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
