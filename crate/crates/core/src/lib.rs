//! Temporal causal algorithmic recourse: trend-stationary structural causal
//! time series, classifiers, recourse solvers and validity analysis.

// Range checks are written as `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod benchmarks;
pub mod error;
pub mod estimator;
pub mod noise;
pub mod persist;
pub mod predictors;
pub mod recourse;
pub mod rng;
pub mod scm;
pub mod trend;

pub use error::{Error, Result};
