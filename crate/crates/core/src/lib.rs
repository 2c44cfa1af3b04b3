//! Population-level checks of weak learnability for feedforward networks and
//! of adversarial targets for identifiable smooth parametric models.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod audit;
pub mod cli;
pub mod error;
pub mod halfspace;
pub mod linalg;
pub mod model_zoo;
pub mod network;
pub mod optimizer;
pub mod population;

pub use error::{Error, Result};
