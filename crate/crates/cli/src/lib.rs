//! File formats, configuration and orchestration around `ltc-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod runner;

pub use config::RunConfig;
pub use error::{CliError, Result};
