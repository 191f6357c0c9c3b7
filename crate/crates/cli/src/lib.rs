//! File formats, plots and subcommands for the `gara` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;
pub mod svg;
