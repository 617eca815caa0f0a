//! Experiment harness for deep GNN training tricks: spec files, presets,
//! repeated runs, grids and epoch timing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod presets;
pub mod report;
pub mod runner;
pub mod spec;

pub use error::{BenchError, Result};
pub use presets::resolve_preset;
pub use runner::{grid_search, profile_epoch, run_experiment};
pub use spec::{parse_spec, read_spec, ExperimentSpec};
