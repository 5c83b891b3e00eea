//! Command-line front end: CSV ingestion, configuration files, reports
//! and the `fit`, `genes`, `simulate`, `tune`, `curve` and `generate`
//! commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod genes;
pub mod input;
pub mod report;

pub use error::{CliError, CliResult, DataError};
pub use input::{load_csv, read_csv, save_csv, write_csv};
