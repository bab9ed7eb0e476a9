//! Hierarchical Bayesian B-spline forecasting of failure-rate curves.
//!
//! Failure rates are modelled per ship as an intercept plus a B-spline
//! curve over age. Ship parameters are partially pooled toward their engine
//! type, and engine types toward a fleet-wide archetype whose centre comes
//! from a prefit on the fleet-averaged series.
//!
//! The pieces, bottom-up:
//!
//! - [`basis`]: knot vectors and basis matrices.
//! - [`transform`]: Yeo-Johnson scaling of the response.
//! - [`model`]: the log-posterior and its gradient.
//! - [`sampler`] and [`diagnostics`]: HMC and convergence checks.
//! - [`workflow`]: averaging, prefit, full fit, artifacts, predictive checks.
//! - [`forecast`]: curves for existing ships, new ships, new types.
//! - [`eval`]: RMSE, cross-validation and pooling baselines.
//! - [`data`]: raw records and CSV input.
//! - [`datagen`]: synthetic fleets with bathtub-shaped curves.
//! - [`cli`]: the `hbspline` command-line front end.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod data;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod model;
pub mod sampler;
pub mod transform;
pub mod workflow;

pub use error::{Error, Result};
