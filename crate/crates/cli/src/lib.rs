//! Scenario configuration and runner behind the `navsim` command.

pub mod config;
pub mod scenario;

pub use config::{ConfigError, ScenarioConfig};
pub use scenario::{run_scenario, ExitReport, Status};
