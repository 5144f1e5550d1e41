//! Command-line harness: dataset archives, run configuration, training,
//! evaluation and comparison with reproducibility manifests.

pub mod archive;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::CliError;
