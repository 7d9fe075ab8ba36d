//! Experiment harness: `generate`, `fit`, `eval-predict`, `control` and
//! `sweep` subcommands over the `gce-core` toolkit.
//!
//! Results are CSV files whose first line is `# gce <version> config=<hash>`;
//! configurations, manifests and reports are JSON. Exit codes: 0 success,
//! 2 configuration error, 3 numerical failure, 4 I/O failure.

pub mod cli;
pub mod commands;
pub mod config;
pub mod csv;
pub mod error;
pub mod pipeline;

pub use cli::run;
pub use config::{ExperimentConfig, Preset};
pub use error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
