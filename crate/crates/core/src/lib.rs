//! Sparse Gaussian-process classification.
//!
//! Probit GP classifiers are trained with Expectation Propagation on an
//! active subset of the data. The subset is grown and pruned from the
//! model's own predictive probabilities (threshold rules, a fixed-budget
//! exchange rule, or a random baseline) while the kernel hyperparameters are
//! re-optimized on it.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active_set;
pub mod cli;
pub mod config;
pub mod data;
pub mod ep;
pub mod error;
pub mod eval;
pub mod hyperopt;
pub mod kernels;
pub mod ml_approx;
pub mod model_file;
pub mod probit;
pub mod representer;
pub mod synthetic;

pub use error::{Error, Result};
