//! File formats, run artifacts, numerical check suites and experiment
//! drivers around `mhairl-core`, plus the `mhairl` command line.

pub mod analysis;
pub mod artifacts;
pub mod checks;
pub mod cli;
pub mod config;
pub mod demos;
pub mod error;
pub mod experiments;

pub use error::{Error, Result};
