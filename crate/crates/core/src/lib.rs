//! Radon-Kolmogorov-Smirnov two-sample testing.
//!
//! The RKS statistic is the largest difference of empirical means over
//! ridge splines `(w^T x - b)_+^k` with `||w|| = 1`, `b >= 0`, computed on
//! centered and scaled data. For `k >= 1` it is approached by optimizing a
//! small two-layer network; for `k = 0` by a logistic-regression direction
//! followed by an exact threshold scan. Exact and brute-force oracles,
//! kernel and energy baselines, permutation calibration, a simulator for
//! the asymptotic null and a replicated-experiment harness complete the
//! crate.

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod calibrate;
pub mod error;
pub mod gen;
pub mod harness;
mod linalg;
pub mod model;
pub mod nulldist;
pub mod opt;
pub mod ridge;
pub mod seed;
pub mod statistic;

pub use error::{Result, RksError};
pub use model::{destandardize_value, standardize, Label, SampleSet, Standardization, StandardizedPair};
pub use opt::{multi_restart, optimize, OptConfig, OptTrace};
pub use ridge::{Objective, RidgeNetwork};
pub use statistic::{compute_rks, K0Method, MmdResult, RksConfig};
