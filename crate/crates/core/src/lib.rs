//! Core algorithms for self-interpretable representation networks.
//!
//! A model pairs a learnable representation matrix `B` with a RePU-activated
//! feed-forward network `g`, predicting `g(Bx)`. Group-lasso penalties on the
//! rows and columns of `B` select the representation dimension and the active
//! covariates; a depth penalty and an `l1` penalty shrink the network. Training
//! is mini-batch subgradient descent with periodic hard truncation.
//!
//! On top of a fitted model the crate provides two hypothesis tests: a
//! per-covariate chi-square test built from a sandwich covariance, and a
//! cross-fitted test for whether a subset of representations suffices.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI, and
//! experiment orchestration live in the `deepin` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod error;
pub mod inference;
pub(crate) mod math;
pub mod model;
pub mod network;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{DeepInModel, RepMatrix, Task};
pub use network::RepuNetwork;
pub use numerics::{Matrix, Rng};
pub use trainer::{PenaltyConfig, StructureTriplet, TrainOptions};
