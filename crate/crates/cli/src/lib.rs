//! Config parsing and report writing for the `fedsift` experiment runner.

pub mod config;
pub mod run;

pub use config::{ConfigError, ExperimentConfig};
pub use run::{build_simulation, run, RunError};
