//! Numerical laboratory for interior regularity of the Monge–Ampère equation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod field;
pub mod geometry;
pub mod io;
pub mod iteration;
pub mod sections;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
