//! File formats, experiment orchestration and the `ctrecon` command line
//! for the `ctrecon-core` reconstruction kernels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod experiment;
pub mod formats;
pub mod manifest;

pub use experiment::{run_experiment, ResultTable, RunOptions};
pub use manifest::Manifest;
