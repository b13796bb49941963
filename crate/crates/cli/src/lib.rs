//! Command-line front end: dataset readers, benchmarks and subcommands.

pub mod app;
pub mod bench;
pub mod dataset;

pub use app::run;
