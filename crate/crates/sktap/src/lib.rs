//! Numerical library for the Sherrington-Kirkpatrick model at the TAP level:
//! the scalar replica-symmetric layer, Bolthausen's conditional iteration
//! for approximate TAP solutions, the TAP free energy and its Hessian, and
//! free-probability predictions (limiting spectra, support edges, outlier
//! eigenvalues) to compare sampled Hessian spectra against.
//!
//! The `experiments` module drives the desk-scale studies behind the `sktap`
//! command-line tool; everything underneath is a pure function of its inputs
//! and safe to call from parallel replicas.

pub mod amp;
pub mod error;
pub mod experiments;
mod linalg;
pub mod params;
pub mod quad;
pub mod rng;
pub mod rs;
pub mod spectra;
pub mod tap;

pub mod freeprob;

pub use error::{Result, SkError};
pub use params::ModelParams;

/// Version string recorded in every emitted experiment file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
