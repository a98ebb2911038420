//! Command implementations behind the `catsam` binary.

pub mod commands;
pub mod config;

pub use config::{load_config, RunConfig};
