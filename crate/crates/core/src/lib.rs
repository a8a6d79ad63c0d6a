//! Growth curve (GMANOVA) model `Y = X Θ Z' + E` with row covariance `Σ`:
//! the invariant covariance estimator, known-covariance and two-stage
//! generalized least squares, asymptotic inference for `γ = C Θ D'`, and a
//! Monte Carlo harness for checking the large-sample behaviour.

pub mod error;
pub mod estimators;
pub mod inference;
pub mod matlib;
pub mod mc;
pub mod model;

#[cfg(test)]
mod testutil;

pub use error::{GcmError, Result};
pub use matlib::{Matrix, SpdMatrix, Vector};
