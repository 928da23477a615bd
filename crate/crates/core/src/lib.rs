//! Compact block- and rank-sparse recovery (COBRAS) for direction finding in
//! partly calibrated sensor arrays.
//!
//! The crate is organised bottom-up:
//!
//! * [`array_model`] builds steering vectors, subarray dictionaries and the
//!   common-baseline selection structure.
//! * [`signal_sim`] generates synthetic measurements and sample covariances.
//! * [`conic`] is a small ADMM solver for complex Hermitian SDPs.
//! * [`cobras_grid`] holds the grid-based estimators (the mixed-norm
//!   reference problem and both compact SDP forms).
//! * [`gridless`] holds the dual certificates, Gram-matrix SDP and
//!   matrix-polynomial rooting for common-baseline arrays.
//! * [`bench`] runs Monte Carlo scenarios and computes error metrics.

pub mod array_model;
pub mod bench;
pub mod cobras_grid;
pub mod conic;
pub mod error;
pub mod gridless;
pub mod linalg;
pub mod signal_sim;

pub use error::{CobrasError, Result};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
