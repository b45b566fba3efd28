//! File formats, parallel evaluation and command-line plumbing around
//! `cdt-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod plot;
pub mod predictions;
pub mod report;
pub mod runner;

pub use error::{CliError, Result};
