//! Scenario files and batch runs for the `ccshape` command-line tool.

pub mod config;
pub mod run;

pub use config::{validate_scenario, ConfigError, Scenario, ScenarioFile};
pub use run::{run_scenario, Command, RunArtifacts, RunError};
