//! File formats, metrics, experiment orchestration and the command line for
//! DeepIn networks.
//!
//! The algorithms live in `deepin-core`; this crate adds what needs the
//! standard library: CSV datasets, versioned JSON model files, TOML
//! experiment configs, parallel Monte Carlo benchmarks and the `deepin`
//! binary.

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model_file;

pub use deepin_core;
pub use error::{HarnessError, Result};
