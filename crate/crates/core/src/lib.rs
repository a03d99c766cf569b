//! Meshless discretization of Poisson-type problems with generalized moving
//! least squares (GMLS).
//!
//! The direct MLPG variants recover every test functional (collocation,
//! local weak forms) straight from nodal values by evaluating the functional
//! on polynomials only. A classical MLS/MLPG5 path that integrates shape
//! function derivatives is kept as a reference.

// `!(x > 0.0)` is used on purpose so NaN fails validation; indexed loops
// mirror the formulas in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod bench;
pub mod cli;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod gmls;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
