//! Loss-calibrated empirical risk minimization over linear function classes.
//!
//! The crate provides the pieces needed to study how the choice of loss
//! interacts with the geometry of a constraint set and the tail behaviour of
//! the noise:
//!
//! * [`losses`] — squared, Huber and logistic losses with derivatives, local
//!   strong-convexity profiles, and noise-calibrated Huber parameters;
//! * [`geometry`] — constraint sets (`ℝⁿ`, `ℓ₂` ball, `ℓ₁` ball, and their
//!   intersection) with exact Euclidean projections and support functions;
//! * [`decomposition`] — the pointwise split of the excess loss into its
//!   multiplier and quadratic components;
//! * [`erm`] — projected-gradient empirical risk minimization;
//! * [`complexity`] — Monte Carlo Gaussian/Rademacher widths, the localization
//!   fixed points they induce, and closed-form rate predictors;
//! * [`smallball`] — small-ball constants, Paley–Zygmund certificates and
//!   order-statistics diagnostics;
//! * [`synthdata`] — synthetic designs and noise with known moments;
//! * [`experiments`] — seeded, reproducible Monte Carlo experiment drivers;
//! * [`cli`] — the `calerm` command-line front end (config in, CSV out).
//!
//! Everything downstream of a seed is deterministic: replicate seeds are
//! derived from the master seed and replicate indices, so results do not
//! depend on the number of worker threads.

pub mod cli;
pub mod complexity;
pub mod config;
pub mod decomposition;
pub mod erm;
mod error;
pub mod experiments;
pub mod geometry;
pub mod losses;
pub mod plot;
pub mod smallball;
pub mod synthdata;
pub(crate) mod util;

pub use error::{Error, Result};
