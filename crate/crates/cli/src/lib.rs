//! Command-line front end: configuration parsing, run orchestration and
//! output files.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, parse_with_overrides, RunConfig};
pub use error::CliError;
pub use run::{run, Command, Invocation};
