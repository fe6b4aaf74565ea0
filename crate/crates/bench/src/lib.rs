//! Config-driven Monte Carlo benchmarks for the SBL solvers in `tsbl-core`.

// `!(x > 0.0)` is used on purpose so NaN takes the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod error;
pub mod plot;
pub mod report;
pub mod runner;

pub use config::{Algorithm, ExperimentConfig};
pub use error::BenchError;
pub use runner::{run_experiment, TrialRecord};
