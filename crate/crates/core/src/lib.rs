//! Variational inference for zero-inflated Poisson log-normal (ZIPLN) models.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod elbo;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod selection;
pub mod simbench;
pub mod special;

pub use error::{Result, ZiplnError};
