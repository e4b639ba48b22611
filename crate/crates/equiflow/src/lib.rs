//! Files, experiments and the command-line interface around `equiflow-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;

pub use config::{Arch, RunConfig};
pub use error::CliError;
