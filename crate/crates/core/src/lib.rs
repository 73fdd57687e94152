//! Estimation and simultaneous inference for spatial partial-correlation
//! graphs shared across several sessions of matrix-variate (time × space)
//! Gaussian data.
//!
//! The pipeline is:
//!
//! 1. [`grouplasso`]: node-wise group-lasso regressions that borrow strength
//!    across sessions through a shared support.
//! 2. [`spatial`]: residuals, bias-corrected residual covariance and the
//!    per-session partial correlations.
//! 3. [`temporal`]: banded modified-Cholesky estimate of each session's
//!    temporal covariance, needed for the variance of the edge statistics.
//! 4. [`inference`]: aggregated edge statistics, their plug-in asymptotic
//!    covariance and a Gaussian parametric bootstrap for sup-norm tests.
//!
//! [`simulate`] and [`experiments`] generate synthetic data and run the
//! coverage / ROC studies.

pub mod datamodel;
pub mod error;
pub mod experiments;
pub mod grouplasso;
pub mod inference;
pub mod linalg;
pub mod rng;
pub mod simulate;
pub mod spatial;
pub mod temporal;

pub use datamodel::{Dimensions, EdgeSet, GroundTruth, MultiSessionDataset, Trial};
pub use error::{Error, Result};
