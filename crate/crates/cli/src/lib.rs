//! Command-line front end and HTTP demo service.

pub mod args;
pub mod bundle;
pub mod commands;
pub mod error;
pub mod serve;

pub use error::{CliError, CliResult};
