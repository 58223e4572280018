//! File formats, configuration and report emission for the `transmat` command.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod idx;
pub mod report;
pub mod runner;
pub mod seqfile;

pub use error::{CliError, CliResult};
