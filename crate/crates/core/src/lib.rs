//! Lp approximation of constrained supremal variational problems.

// `!(a <= b)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod constraints;
pub mod continuation;
pub mod error;
pub mod functionals;
pub mod kkt;
pub mod lbfgs;
pub mod mesh;
pub mod oracle;
mod precond;
pub mod solver;

pub use error::{Error, Result};
