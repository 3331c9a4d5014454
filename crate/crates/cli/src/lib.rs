//! Pipeline subcommands behind the `ibrag` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_eval, cmd_mine, cmd_prefs, cmd_score, cmd_select, Paths};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
