//! Numerical core for inverse problems of the semilinear elliptic equation
//! `Δu + a(x, u) = 0` on the unit square.
//!
//! The crate is `no_std` (with `alloc`). File formats, configuration and the
//! command line live in the companion `semilinear` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod cauchy;
pub mod error;
pub mod matched;
pub mod mesh;
pub mod nonlinearity;
pub mod reconstruct;
pub mod runge;
pub mod schrodinger;
pub mod solution_map;
pub mod sparse;

mod dense;

pub use error::{Error, Result};
pub use mesh::{BoundaryField, Field, Grid};
