//! Simulation and estimation for SDE-based animal movement models under
//! regular and lattice-and-random-intermediate-point (LARI) sampling.
//!
//! The crate covers:
//!
//! * [`surfaces`]: gridded and analytic potential/motility surfaces, raster
//!   gradients, and the first-difference smoothing penalty;
//! * [`sim`]: Euler–Maruyama path simulation over irregular time steps;
//! * [`sampling`]: regular and LARI subsampling;
//! * [`ols`]: whitened least-squares fits of the quadratic and sign-drift models;
//! * [`mcmc`]: adaptive Metropolis-within-Gibbs with imputation of unobserved positions;
//! * [`pls`]: the three-step penalized estimator of gridded surfaces;
//! * [`diagnostics`]: Geweke z-scores, accuracy metrics and design comparison;
//! * [`experiment`]: named, seeded experiment recipes.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod mcmc;
pub mod ols;
pub mod path;
pub mod pls;
pub mod rng;
pub mod sampling;
pub mod sim;
pub mod stats;
pub mod surfaces;

pub use error::{Error, Result};
pub use path::MovementPath;

/// Formats a float with 17 significant digits (lossless round trip).
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}
