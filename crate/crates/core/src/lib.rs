//! Pairwise permute-and-relearn feature importance.
//!
//! Permuting one feature of a pair of strongly correlated predictors and
//! retraining lets the model recover most of the signal from the partner, so
//! both features look less important than they are. This crate permutes
//! correlated pairs jointly, retrains, and averages the resulting importances
//! with the absolute correlations as weights. It also provides the single-
//! feature relearn and the fixed-model permutation importances, rank
//! aggregation over repeated stratified splits, two retrainable learners, and
//! a synthetic benchmark with correlated features.

pub mod correlation;
pub mod data;
pub mod error;
pub mod importance;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod toy;

pub use error::{Error, ErrorKind, Result};
