//! Configuration, artifact formats and subcommands for `dpa-lab`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::{load_config, ExperimentConfig};
pub use error::{LabError, Result};
pub use pipeline::{Data, Lab};
