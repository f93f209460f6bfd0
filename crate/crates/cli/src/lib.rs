//! Command-line front end: synthetic data generation, training runs,
//! evaluation, bootstrap comparison, embedding diagnostics, step timing and
//! the held-out-family protocol.

pub mod args;
pub mod commands;
pub mod error;
pub mod protocol;

pub use error::{CliError, Result};
