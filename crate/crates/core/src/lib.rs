//! Numerical laboratory for the training dynamics of wide two-layer networks.
//!
//! The crate integrates the closed two-time equations that govern gradient-flow
//! learning curves in the proportional regime (n, d large at fixed n/d), checks
//! them against direct Monte-Carlo gradient descent on the Gaussian-equivalent
//! random landscape and against SGD on actual two-layer networks, and implements
//! the large-width asymptotic reductions (lazy, mean-field, p-spin, fixed ratio)
//! together with the threshold-fitting analysis used to locate interpolation
//! transitions.
//!
//! Module map:
//!
//! - [`kernels`]: polynomial activation covariances h(q) and target links.
//! - [`timegrid`]: uniform grids, causal two-time storage, quadrature, and the
//!   incremental triangular solve for the residual response/correlation pair.
//! - [`dmft`]: the full per-neuron solver and its symmetric reduction.
//! - [`gaussian_sim`]: random-tensor landscapes and projected GD on them.
//! - [`network_sim`]: projected SGD on real two-layer networks.
//! - [`scaling`]: closed forms and reduced solvers for every large-m regime.
//! - [`analysis`]: relaxation times, power-law threshold fits, collapse tools.
//! - [`rng`]: deterministic per-realization random streams.
//! - [`csvio`]: plot-ready CSV emission with fixed 17-digit formatting.

pub mod analysis;
pub mod csvio;
pub mod dmft;
pub mod gaussian_sim;
pub mod kernels;
pub mod network_sim;
pub mod rng;
pub mod scaling;
pub mod timegrid;
