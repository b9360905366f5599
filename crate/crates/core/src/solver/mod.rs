//! Monotone wide-stencil solver for det^{1/2} D²v = f in the plane, and solution-level checks.

mod checks;
mod domain;
mod newton;
mod sparse;
mod stencil;

pub use checks::{
    alexandrov_ratio, comparison_violation, difference_estimate_check, ma_measure, minimum_estimates, pogorelov_window, separation_check,
    DifferenceDiagnostics, MinimumEstimates, PogorelovWindow, POGORELOV_LEVEL, POGORELOV_WINDOW,
};
pub use domain::Domain;
pub use newton::{grid_for, solve, solve_on, solve_unit, solve_unit_on, SolveReport, SolverConfig};
pub use sparse::{bicgstab, Csr, Ilu0};
pub use stencil::{directions, orthogonal_pairs, superbase_form, superbases, Scheme};
