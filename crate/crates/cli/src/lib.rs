//! Front end for `retrac`: TOML configuration, on-disk run artifacts and the
//! subcommands that produce reports.

pub mod commands;
pub mod config;
pub mod report;
pub mod run;

pub use config::RunConfig;
pub use run::{LoadedRun, TrainManifest};
