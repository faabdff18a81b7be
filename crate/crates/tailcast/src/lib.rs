//! File formats, checkpoints and the command line for `tailcast-core`.
//!
//! - [`io`]: station CSVs, fit reports, graph and curve exports, JSON
//! - [`checkpoint`]: the `DIGNN1` binary model container
//! - [`config`]: the flat TOML run configuration
//! - [`commands`]: one function per subcommand
//! - [`cli`]: argument parsing and dispatch

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod io;

pub use error::Failure;
