//! Wavelet diffusionlets for the scale-invariant parabolic equation
//! `dQ/dtau = sigma^2 x^{2 lambda} / 2 d2Q/dx2`, and propagation of terminal-condition
//! uncertainty through it with a proportional, independent error structure on the wavelet
//! coefficients.
//!
//! Time runs backwards from maturity: `tau = T - t >= 0`, and every solution surface
//! starts from the terminal condition at `tau = 0`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusionlets;
pub mod error;
pub mod error_structure;
pub mod feynman_kac;
pub mod io;
pub mod linalg;
pub mod pde;
pub mod presets;
pub mod quadrature;
pub mod validation;
pub mod wavelets;

pub use error::{Error, Result};
