//! Multilevel Monte Carlo Euler estimation of `E[psi(X_T)]` for
//! Brownian-driven SDEs, with online adaptive importance sampling.
//!
//! The estimator combines a coarse-level empirical mean with telescoping
//! corrections between consecutive Euler discretization levels. On each
//! level a Girsanov drift tilt is learned online by a projected
//! Robbins-Monro recursion with Polyak-Ruppert averaging, stopped after a
//! configurable number of iterates, which lowers the limiting variance at an
//! additive one-off cost.
//!
//! Modules:
//! - [`sde`]: models, Brownian grids, coupled Euler simulation;
//! - [`importance`]: Girsanov weights and variance-objective gradients;
//! - [`robbins_monro`]: projected / expanding-truncation recursions;
//! - [`mlmc`]: level planning, the estimators, cost accounting;
//! - [`oracle`]: closed-form prices, limit-process simulation, variance
//!   surfaces and weak-error fits used as independent ground truths;
//! - [`bench`]: config parsing, RMSE sweeps, calibration runs, CSV output.
//!
//! See the `examples/` directory for one runnable program per capability.

// `!(x > 0.0)` guards reject NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod importance;
pub mod mlmc;
pub mod oracle;
pub mod rng;
pub mod robbins_monro;
pub mod sde;

pub use error::{Error, Result};
