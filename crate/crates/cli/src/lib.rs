//! Command line entry points and the HTTP prediction service.

pub mod commands;
pub mod config;
pub mod error;
pub mod server;

pub use error::CliError;
