//! Command-line tool and HTTP service for the recommender.

mod commands;
pub mod config;
pub mod server;

pub use commands::{run, write_outputs, Cli, CliError, Command};
pub use config::AppConfig;
