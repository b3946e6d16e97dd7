//! Experiment harness: configuration, suites on disk, the two-stage training
//! pipeline, evaluation reports and run manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod suite;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
