//! Model-based radio localization and sensing.
//!
//! The crate is organised along the processing chain:
//!
//! - [`geometry`]: node states and the state → (AoA, AoD, delay, Doppler) maps
//! - [`channel`]: array responses and multipath MIMO-OFDM channel synthesis
//! - [`signal`]: pilots, combiners and noisy observations
//! - [`bounds`]: Slepian–Bangs Fisher information, CRB, PEB/OEB/VEB
//! - [`resolution`]: closed-form delay/Doppler/angle resolution
//! - [`estimation`]: LS channel estimate, OMP, periodogram, ML refinement
//! - [`positioning`]: weighted nonlinear least squares and direct positioning
//! - [`harness`]: scenario config, Monte-Carlo sweeps and CSV output

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod channel;
mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
mod linalg;
pub mod positioning;
pub mod resolution;
pub mod signal;

pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Nominal speed of light, m/s. The rounded value keeps the usual
/// resolution figures exact (c/400 MHz = 0.75 m, λ = 1 cm at 30 GHz).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;
