//! Simulation engine for differentially private federated learning with
//! heterogeneous per-client privacy budgets.
//!
//! The crate is split along the life of an experiment:
//!
//! - [`dp`]: noise calibration, sampling, clipping and budget accounting for
//!   the Gaussian and Laplace mechanisms.
//! - [`selection`]: selection plans driven by the convergence bound, the
//!   stage-one parameter estimators and the bound-fitting solver.
//! - [`engine`]: models, local training, distortion, aggregation and the
//!   two-stage biased-selection loop plus the baseline loops.
//! - [`harness`]: synthetic/CSV data, Dirichlet partitioning, budget
//!   sampling and multi-seed comparisons.
//! - [`config`]: the flat key-value experiment configuration.

pub mod config;
pub mod dp;
pub mod engine;
mod error;
pub mod harness;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
