//! Convex sets, enclosing ellipsoids, affine maps and the group action on fields.

mod action;
mod affine;
mod ellipsoid;
mod lp;
mod polytope;

pub use action::{group_action, group_action_with, ActionBudget};
pub use affine::{transform_stats, AffineMap, TransformStats};
pub use ellipsoid::{min_enclosing_ellipsoid, normalize_domain, Ellipsoid};
pub use lp::in_convex_hull;
pub use polytope::{convex_hull_2d, ConvexPolytope};

/// Euclidean distance between two 2-D points.
pub fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
