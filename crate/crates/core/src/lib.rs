//! Non-coherent direction-of-arrival estimation for partly calibrated arrays.
//!
//! A partly calibrated array is a set of subarrays whose internal geometry is
//! known but whose mutual displacements are not. Each subarray forwards only
//! its local sample covariance matrix; this crate estimates source directions
//! from those matrices alone.
//!
//! Module map:
//!
//! * [`geometry`]: subarray layouts, steering vectors, co-array manifolds.
//! * [`signal`]: source/noise models, snapshot synthesis, covariances.
//! * [`identifiability`]: covariance lags and identifiable source counts.
//! * [`estimators`]: SPICE sparse fitting and maximum-likelihood estimators.
//! * [`crb`]: Cramér-Rao bounds, exact and high-SNR.
//! * [`experiment`]: scenario files, Monte Carlo runner, metrics, CSV.
//!
//! Angles are radians throughout the library API. Degrees appear only in
//! scenario files, CSV output and the CLI.

pub mod crb;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod geometry;
pub mod identifiability;
pub mod linalg;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};
pub use geometry::{ArrayGeometry, SubarrayGeometry};
pub use linalg::{CMatrix, CVector, C64};
pub use signal::{CovarianceKind, CovarianceSet, NoiseModel, SourceModel};

/// Degrees to radians.
#[inline]
pub fn deg(x: f64) -> f64 {
    x.to_radians()
}
