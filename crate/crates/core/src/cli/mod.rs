//! Command-line experiment runner.

pub mod commands;
pub mod config;

pub use commands::{execute, run, RunOptions, RunSummary};
pub use config::{ExperimentConfig, Mode};
