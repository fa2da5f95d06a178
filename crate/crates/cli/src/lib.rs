//! Command-line pipeline: train a base model, analyze its spectrum,
//! generate and evolve pools, attack them, and report the results.

pub mod commands;
pub mod config;
pub mod error;
pub mod stamp;
pub mod table;

pub use commands::Context;
pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};
