//! Configuration, orchestration and persistence for `lagvac` runs.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_run, cmd_sweep, cmd_verify, execute, parse_grid, sweep, verify};
pub use config::{load_config, parse_config, ConfigError, RunConfig};
