//! Files, configuration, timing and the command line around `canet-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod run;

pub use error::{Error, FormatError, Result};
