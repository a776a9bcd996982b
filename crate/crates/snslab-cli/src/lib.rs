//! Library behind the `snslab` binary: configuration, experiment
//! orchestration and run persistence. The acceptance suite drives the same
//! entry points as the command line.

// Negated comparisons like `!(x > 0.0)` are used deliberately: they reject
// NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{parse_config, serialize_config, ExperimentConfig, ExperimentKind};
pub use error::CliError;
pub use experiments::run_experiment;
pub use report::ExperimentOutcome;
