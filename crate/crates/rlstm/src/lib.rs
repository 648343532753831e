//! File formats, a rayon-backed executor and the `rlstm` command line on top
//! of `rlstm-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod formats;
pub mod manifest;

pub use commands::run;
pub use error::{CliError, Result};
pub use exec::RayonExecutor;
