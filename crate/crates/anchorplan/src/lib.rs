//! Files, configuration and batch runs around `anchorplan-core`.
//!
//! Scenario suites and reports are JSON, run configuration is TOML and
//! per-scene figures are SVG. The `anchorplan` binary exposes all of it on
//! the command line.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod harness;
pub mod report;
pub mod suite;
pub mod svg;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use harness::AnyDenoiser;
