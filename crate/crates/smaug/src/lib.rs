//! Experiment runner for `smaug-core`: configuration files, checkpoints,
//! metrics CSVs, subtask-recognition diagnostics and the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod io;
pub mod metrics;
pub mod runner;

pub use config::{ConfigError, ExperimentConfig};
