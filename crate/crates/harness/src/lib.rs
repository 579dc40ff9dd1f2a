//! Experiment runner for `flowscore`: dataset generation, multi-seed
//! training, evaluation, scatter output and table reproduction.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
