//! Numerical laboratory for martingale problems: path simulation, discounted
//! payoff estimation, monotone grid solves of `lambda u - A u = h`, and discrete
//! viscosity checks.
// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod error;
pub mod numerics;
pub mod operator_core;
pub mod grid_resolvent;
pub mod path_sim;
pub mod mc_verify;
pub mod visc_check;
pub mod lab;

pub use error::{LabError, Result};
