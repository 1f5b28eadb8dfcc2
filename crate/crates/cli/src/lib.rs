//! Experiment runner behind the `vireid-lab` binary: JSON-configured loss
//! grids on synthetic two-modality data, plus a built-in self test.

pub mod config;
pub mod error;
pub mod experiment;
pub mod selftest;

pub use config::{EvalConfig, ExperimentConfig, GridOption, Overrides};
pub use error::CliError;
pub use experiment::{run_experiment, CellResult};
pub use selftest::{gradient_outcomes, oracle_outcomes, run_selftest, CheckOutcome, Kernels};
