//! Distributionally robust Bayesian quadrature optimization.
//!
//! A GP models `f(x, w)` over decisions `x` and a fixed sample of contexts
//! `w_1..w_n`; the optimizer maximizes the worst case, over reweightings of
//! the sample inside a χ² ball, of the weighted average of `f(x, ·)`.

pub mod acquisition;
pub mod baselines;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod parallel;
pub mod robust_weights;

pub use error::{Error, Result};
