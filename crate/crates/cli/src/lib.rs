//! Batch front end for the Schmidt tensor network state engine.

pub mod checkpoint;
mod commands;
pub mod config;
pub mod error;
pub mod records;

pub use commands::{run, Cli, Command, CHECKPOINT_FILE, TRACE_FILE};
