//! Experiment runner: simulate, train, fit, solve recourse, evaluate over
//! time, verify the stability bounds and aggregate the results.

pub mod bundle;
pub mod config;
pub mod pipeline;
pub mod report;
