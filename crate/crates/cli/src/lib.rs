//! Command-line driver: configuration, commands, JSON reports and CSV tables.

pub mod commands;
pub mod config;
pub mod output;
pub mod report;

pub use commands::{run, Command};
pub use config::{parse_config, RunConfig, RunOptions};
pub use report::{Check, RunReport};
