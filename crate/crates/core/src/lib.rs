//! Stationary Gaussian fields on rectangular lattices with separable,
//! Gneiting or additive covariance; Hermite functionals of the field,
//! exact chaos diagnostics, limit-regime classification and a Monte Carlo
//! harness.

pub mod chaoscalc;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod fft;
pub mod fieldsim;
pub mod functionals;
pub mod harness;
pub mod hermite;
mod kernel;
pub mod lattice;
pub mod oracle;
pub mod ratelab;

pub use error::{Error, Result};
