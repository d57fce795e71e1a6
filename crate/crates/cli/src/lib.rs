//! Command-line front end: dataset generation, training, baking, evaluation,
//! threshold sweeps and the query server.

pub mod args;
pub mod commands;
pub mod configs;

pub use commands::{exit_code, run, CommandOutcome, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
