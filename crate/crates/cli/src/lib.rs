//! Command-line driver for TR-QNet: configuration, training, evaluation,
//! benchmark grids and circuit simulation.

pub mod commands;
pub mod config;

pub use commands::{bench, eval, simulate, train, write_run, EvalSplit};
pub use config::{parse_settings, RunConfig, Settings};
