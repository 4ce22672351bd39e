//! Experiment runner: TOML configs, deterministic parallel sweeps, CSV and
//! manifest output, and the `jacspec` command line.

pub mod approx;
pub mod cli;
pub mod conditions;
pub mod config;
pub mod error;
pub mod fit;
pub mod manifest;
pub mod rows;
pub mod sweep;

pub use config::{ExperimentConfig, Kind};
pub use error::{HarnessError, Result};
pub use rows::{SweepRow, HEADER};
pub use sweep::{run_sweep, RunOptions, SweepOutput, SweepPlan};
