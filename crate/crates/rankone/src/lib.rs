//! Monte Carlo harness, file formats and CLI around `rankone-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod output;
pub mod plot;
pub mod validate;
