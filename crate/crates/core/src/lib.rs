//! Densities of Ornstein-Uhlenbeck processes driven by Lévy noise.
//!
//! `dX_t = A X_t dt + B dZ_t` on R^n with a d-dimensional Lévy process `Z`.
//! The crate covers the controllability diagnostics for `(A, B)`, the
//! characteristic function of `X_t`, its Fourier inversion to a density on a
//! grid, and Monte Carlo simulation used to cross-check the densities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod charfn;
pub mod density;
pub mod error;
pub mod harness;
pub mod levy;
pub mod linalg;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, Result};
