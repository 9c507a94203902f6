//! Library side of the `limper` command: input parsing and the subcommands.

pub mod commands;
pub mod error;
pub mod input;

pub use error::{CliError, Result};
