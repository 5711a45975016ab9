//! File formats and command implementations for the `pointode` tool.

pub mod checks;
pub mod cloud;
pub mod commands;
pub mod error;
pub mod output;
pub mod weights;

pub use commands::{run, Cli, Command};
pub use error::{CliError, FormatError};
