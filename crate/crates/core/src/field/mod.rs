//! Uniform Cartesian grids and masked scalar fields with interpolation and finite differences.

mod grid;
mod scalar;

pub use grid::Grid;
pub use scalar::{Interp, ScalarField};
