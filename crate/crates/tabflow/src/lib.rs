//! Files, commands and the benchmark harness around `tabflow-core`.

pub mod artifact;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod tune;

pub use artifact::ModelBundle;
pub use config::RunConfig;
pub use error::CliError;
