//! Monte Carlo toolkit for forward-backward stochastic Volterra integral
//! equations and their optimal control.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the quadrature sums.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backward;
pub mod calculus;
pub mod cli;
pub mod condexp;
pub mod control;
pub mod error;
pub mod field;
pub mod forward;
pub mod grid_rng;
pub mod linalg;
pub mod par;
pub mod problem;
pub mod system;

pub use error::{Error, Result};
