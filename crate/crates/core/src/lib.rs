//! Joint state, parameter and input estimation for linear structures from
//! multi-rate, multi-type, non-collocated sensor data.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod timeline;
pub mod ukf;

pub use error::{Error, Result};
