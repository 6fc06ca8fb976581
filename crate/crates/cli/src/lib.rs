//! Scenario runner for the `ncm-core` simulator: declarative TOML scenarios in
//! lab units, deterministic CSV artifacts and a checksummed manifest.

pub mod config;
pub mod error;
pub mod runner;
pub mod scenarios;

pub use config::{ScenarioConfig, ValidationReport};
pub use error::CliError;
pub use runner::{run, PointResult, RunOptions, RunSummary};
