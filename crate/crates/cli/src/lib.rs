//! Scenario configuration and subcommands behind the `slc` binary.

pub mod commands;
pub mod config;

pub use commands::{Context, Failure};
pub use config::{ScenarioConfig, DEFAULT_CONFIG};
