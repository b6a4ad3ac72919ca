//! Numerical laboratory for uniqueness of nonlinear diffusion coefficients
//! from Dirichlet-to-Neumann data.

// `!(x > 0.0)` is deliberate: NaN has to fail the admissibility checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coefficients;
pub mod config;
pub mod error;
pub mod experiments;
pub mod flux;
pub mod geometry;
pub mod identifiability;
pub mod io;
pub mod quadrature;
pub mod reconstruction;
pub mod singular;
pub mod solver;
pub mod sparse;
pub mod testfn;

pub use error::{Error, Result};
