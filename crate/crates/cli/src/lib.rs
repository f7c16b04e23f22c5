//! Pipeline commands behind the `emov2v` binary.

pub mod commands;
pub mod manifest;

pub use commands::{run, Cli, Command};
pub use manifest::RunManifest;
