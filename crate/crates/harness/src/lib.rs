//! Configuration, orchestration, output sinks and verification for the
//! `hierlearn` command-line tool.

pub mod certify;
pub mod config;
pub mod runner;
pub mod sink;
pub mod verify;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Format};
pub use runner::{run_experiment, Mode, RunOptions, RunSummary, OUT_DIR_ENV};
pub use verify::{verify, VerifyReport};
