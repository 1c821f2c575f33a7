//! Library half of the `widthlab` command-line frontend: configuration
//! parsing and validation, artifact emission, and the validation suites.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod output;

pub use config::{ConfigError, RunConfig};
