//! Simulation-based minimum-distance estimation on the unit interval.
//!
//! The estimator matches a spline-projection density estimate of the observed
//! sample against the same estimate computed from data simulated at candidate
//! parameter values, reusing one draw set across all candidates. The crate
//! provides:
//!
//! * dyadic B-spline bases, their banded Gram systems and the L² projection
//!   onto Schoenberg spaces ([`spline`], [`gram`]),
//! * parametric families on `[0,1]` with inverse-CDF simulators ([`model`]),
//! * spline-projection density estimators with parameter gradients
//!   ([`density`]),
//! * the minimum-distance objective reduced to a linear-quadratic form
//!   ([`objective`]),
//! * a box-constrained grid-then-refine minimizer ([`optimizer`]),
//! * end-to-end estimators with plug-in variance ([`inference`]),
//! * a seeded, reproducible Monte Carlo harness with CSV/SVG report emission
//!   ([`harness`], [`report`]).

// banded and small-matrix kernels read better as index loops
#![allow(clippy::needless_range_loop)]

pub mod density;
pub mod error;
pub mod gram;
pub mod harness;
pub mod inference;
pub mod mat;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod quad;
pub mod report;
pub mod spline;

pub use error::{Error, Result};
