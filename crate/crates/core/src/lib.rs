//! Adversarially robust nonparametric regression.
//!
//! Regularized local polynomial fits, the piecewise (PP) and Lepski-adaptive
//! estimators built on them, perturbation-set attack models, hard test instances
//! and Monte Carlo risk evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod attacks;
pub mod basis_kernel;
mod error;
pub mod linalg;
pub mod localpoly;
pub mod neighbors;
pub mod partition;
pub mod risk;
pub mod testbed;

pub use error::{Error, Result};
