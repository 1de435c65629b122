//! Configuration and subcommands behind the `phenocast` binary.

pub mod commands;
pub mod config;
mod error;

pub use config::RunConfig;
pub use error::CliError;
