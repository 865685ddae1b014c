//! File formats, checkpoints, benchmarks and the command-line front end for
//! the `xcaflow-core` flow estimator.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod evaldir;
pub mod io;
pub mod meter;
pub mod report;
pub mod viz;
