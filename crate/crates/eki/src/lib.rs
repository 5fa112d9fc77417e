//! File formats, configuration and commands around `eki-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod parallel;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
