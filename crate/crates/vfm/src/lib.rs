//! File formats, experiment drivers and the `vfm` command line on top of
//! `vfm-core`.

pub mod artifact;
pub mod cli;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod figures;

pub use error::{AppError, Result};
