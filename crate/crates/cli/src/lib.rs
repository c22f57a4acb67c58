#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Config-driven experiment runner for adversarial distributional training.

pub mod config;
pub mod data;
pub mod error;
pub mod report;
pub mod runner;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::CliError;
pub use runner::{execute, execute_config, RunOptions, Stage};
