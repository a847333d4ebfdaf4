//! Command-line front end: dataset generation, training, verification and
//! simulation, separately or as one pipeline.

pub mod commands;
pub mod config;
mod error;

pub use config::{Gates, HitCheck, Overrides, PipelineConfig};
pub use error::CliError;
