//! Command-line front end: configuration parsing, dataset ingestion and
//! experiment orchestration (simulate / fit / compare / pf-variance), emitting
//! chains, summaries, predictive bands and plot-ready CSVs.

// Guards written as `!(x > 0.0)` intentionally reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use commands::{cmd_compare, cmd_fit, cmd_pf_variance, cmd_simulate};
pub use config::{load, resolve, Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};
