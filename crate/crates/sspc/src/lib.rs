//! File formats, run configuration and the `sspc` command-line driver.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod pointfile;
pub mod report;

pub use error::{Error, FormatError};
