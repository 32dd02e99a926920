//! HTTP service and `hedge` command-line front end.

pub mod bench;
pub mod cli;
pub mod density_fit;
pub mod error;
pub mod estimate;
pub mod generate;
pub mod nli;
pub mod service;

pub use error::CliError;
