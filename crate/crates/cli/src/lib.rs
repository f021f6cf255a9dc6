//! Command-line front end: dataset discovery, subcommands, reports and plots.

pub mod commands;
pub mod dataset;
pub mod error;
pub mod plot;
pub mod report;
