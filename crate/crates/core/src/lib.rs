//! Sparse entropic Wasserstein regression pruning.
//!
//! Transport-plan solvers ([`ot`]), the regression objectives and hard
//! thresholding ([`ewr`]), the staged prune loop and comparison drivers
//! ([`pruner`]), and a small MLP harness that produces gradient matrices
//! ([`model`]).

pub mod error;
pub mod ewr;
pub mod linalg;
pub mod model;
pub mod ot;
pub mod pruner;
pub mod rng;

pub use error::{Error, Result};
