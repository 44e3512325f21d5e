//! Metric-optimal estimation for noisy multi-measurement-vector (MMV) problems.
//!
//! The pipeline has two parts. [`gamp::run_gamp`] reduces the J linear
//! inverse problems `y⁽ʲ⁾ = Z(A⁽ʲ⁾x⁽ʲ⁾)` to an equivalent scalar Gaussian
//! channel `q = x + v`, `v ~ N(0, Δ_v)`. The denoisers in [`metric`] then map
//! each pseudo-data super-symbol to the estimate minimizing a chosen additive
//! error metric, and [`limits`] evaluates the matching theoretic error floor
//! as a function of `Δ_v`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod error;
pub mod gamp;
pub mod harness;
pub mod limits;
pub mod metric;
pub mod model;
pub mod omp;
pub mod quad;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
