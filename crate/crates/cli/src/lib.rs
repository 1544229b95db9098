//! Scenario parsing and batch commands for the `vmv-spread` binary.

pub mod commands;
pub mod scenario;

pub use commands::{run, CliError, Command, Report, RunOptions};
pub use scenario::{parse_scenario, parse_scenario_bytes, ErrorCode, Scenario, ScenarioError};
