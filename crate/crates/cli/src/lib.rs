//! Library behind the `gcm` command: CSV and JSON formats, report schema and
//! the subcommands themselves.

pub mod commands;
pub mod error;
pub mod io;
pub mod report;
pub mod tables;

pub use error::{CliError, CliResult, ErrorRecord};
