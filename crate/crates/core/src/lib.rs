//! Nonlinear filtering by backward-SDE density prediction, Bayesian update, and
//! a kernel density learned online by stochastic gradient descent.

pub mod bayes;
pub mod error;
pub mod filter;
pub mod gaussian;
pub mod harness;
pub mod kde;
pub mod learn;
pub mod model;
pub mod predict;
pub mod rng;

pub use error::{Error, Result};
