//! Greedy gradient-based hyperparameter learning.
//!
//! Parameters are trained by Adam, LAMB or Adafactor while the learning-rate
//! scalar and `beta1` are updated every step from the gradient of a held-out
//! guidance loss taken through that one optimizer step.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN.

pub mod error;
pub mod guided;
pub mod hpo;
pub mod models;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
