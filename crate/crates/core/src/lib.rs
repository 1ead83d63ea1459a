//! Defective optimal-transport costs on the unit sphere and in ℝᵈ, their
//! exponential-type maps and regularity conditions, and a support-restricted
//! entropic solver for the far-field lens refractor problem.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod hessian;
pub mod mapping;
pub mod mtw;
pub mod quadrature;
pub mod roots;
pub mod solvability;
pub mod solver;
pub mod sphere;

pub use error::{Error, Result};
