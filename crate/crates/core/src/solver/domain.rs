use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConvexPolytope;

/// Planar convex domain with exact boundary queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Polygon(ConvexPolytope),
    Ellipse { center: [f64; 2], axes: [f64; 2], angle: f64 },
}

impl Domain {
    pub fn disk(center: [f64; 2], r: f64) -> Result<Self> {
        Self::ellipse(center, [r, r], 0.0)
    }

    pub fn ellipse(center: [f64; 2], axes: [f64; 2], angle: f64) -> Result<Self> {
        if !(axes[0] > 0.0 && axes[1] > 0.0) || !axes[0].is_finite() || !axes[1].is_finite() {
            return Err(Error::Domain("ellipse semi-axes must be positive".into()));
        }
        Ok(Domain::Ellipse { center, axes, angle })
    }

    pub fn polygon(p: ConvexPolytope) -> Result<Self> {
        if p.dim() != 2 {
            return Err(Error::Domain("solver domains are planar".into()));
        }
        Ok(Domain::Polygon(p))
    }

    fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        match self {
            Domain::Ellipse { center, angle, .. } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                [c * dx + s * dy, -s * dx + c * dy]
            }
            Domain::Polygon(_) => p,
        }
    }

    /// Negative inside; for polygons minus the boundary distance, for ellipses the scaled gauge minus one.
    pub fn level(&self, p: [f64; 2]) -> f64 {
        match self {
            Domain::Polygon(poly) => poly.signed_distance_2d(p),
            Domain::Ellipse { axes, .. } => {
                let q = self.to_local(p);
                let g = ((q[0] / axes[0]).powi(2) + (q[1] / axes[1]).powi(2)).sqrt();
                (g - 1.0) * axes[0].min(axes[1])
            }
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.level(p) < 0.0
    }

    /// Smallest t > 0 with p + t·d on the boundary, for p inside.
    pub fn exit_distance(&self, p: [f64; 2], d: [f64; 2]) -> f64 {
        match self {
            Domain::Polygon(poly) => poly.exit_distance_2d(p, d),
            Domain::Ellipse { axes, angle, .. } => {
                let q = self.to_local(p);
                let (s, c) = angle.sin_cos();
                let e = [c * d[0] + s * d[1], -s * d[0] + c * d[1]];
                let (ia, ib) = (1.0 / (axes[0] * axes[0]), 1.0 / (axes[1] * axes[1]));
                let a = e[0] * e[0] * ia + e[1] * e[1] * ib;
                let b = 2.0 * (q[0] * e[0] * ia + q[1] * e[1] * ib);
                let cc = q[0] * q[0] * ia + q[1] * q[1] * ib - 1.0;
                if a <= 0.0 {
                    return f64::INFINITY;
                }
                let disc = (b * b - 4.0 * a * cc).max(0.0).sqrt();
                // stable root of the positive branch
                let t = if b >= 0.0 { -2.0 * cc / (b + disc) } else { (-b + disc) / (2.0 * a) };
                t.max(0.0)
            }
        }
    }

    /// Euclidean distance to the boundary.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Domain::Polygon(poly) => poly.boundary_distance_2d(p),
            Domain::Ellipse { axes, .. } => {
                let q = self.to_local(p);
                if axes[0] == axes[1] {
                    return (q[0].hypot(q[1]) - axes[0]).abs();
                }
                let point = |t: f64| [axes[0] * t.cos(), axes[1] * t.sin()];
                let d2 = |t: f64| {
                    let e = point(t);
                    (e[0] - q[0]).powi(2) + (e[1] - q[1]).powi(2)
                };
                let m = 256;
                let mut best = (0..m)
                    .map(|k| 2.0 * std::f64::consts::PI * k as f64 / m as f64)
                    .min_by(|a, b| d2(*a).total_cmp(&d2(*b)))
                    .unwrap_or(0.0);
                let mut step = 2.0 * std::f64::consts::PI / m as f64;
                for _ in 0..60 {
                    let (l, r) = (best - step, best + step);
                    if d2(l) < d2(best) {
                        best = l;
                    } else if d2(r) < d2(best) {
                        best = r;
                    } else {
                        step *= 0.5;
                    }
                }
                d2(best).sqrt()
            }
        }
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Domain::Polygon(p) => p.bbox_2d(),
            Domain::Ellipse { center, axes, angle } => {
                let (s, c) = angle.sin_cos();
                let hx = ((axes[0] * c).powi(2) + (axes[1] * s).powi(2)).sqrt();
                let hy = ((axes[0] * s).powi(2) + (axes[1] * c).powi(2)).sqrt();
                ([center[0] - hx, center[1] - hy], [center[0] + hx, center[1] + hy])
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Polygon(p) => p.diameter(),
            Domain::Ellipse { axes, .. } => 2.0 * axes[0].max(axes[1]),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Domain::Polygon(p) => p.area_2d(),
            Domain::Ellipse { axes, .. } => std::f64::consts::PI * axes[0] * axes[1],
        }
    }

    /// Boundary points with spacing at most `step`.
    pub fn boundary_samples(&self, step: f64) -> Vec<[f64; 2]> {
        match self {
            Domain::Polygon(p) => p.boundary_samples_2d(step),
            Domain::Ellipse { center, axes, angle } => {
                let m = ((2.0 * std::f64::consts::PI * axes[0].max(axes[1]) / step).ceil() as usize).max(16);
                let (s, c) = angle.sin_cos();
                (0..m)
                    .map(|k| {
                        let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                        let (x, y) = (axes[0] * t.cos(), axes[1] * t.sin());
                        [center[0] + c * x - s * y, center[1] + s * x + c * y]
                    })
                    .collect()
            }
        }
    }

    /// Polygonal version (inscribed polygon for ellipses).
    pub fn to_polytope(&self, sides: usize) -> Result<ConvexPolytope> {
        match self {
            Domain::Polygon(p) => Ok(p.clone()),
            Domain::Ellipse { center, axes, angle } => ConvexPolytope::ellipse(*center, axes[0], axes[1], *angle, sides),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_queries() {
        let d = Domain::disk([0.5, 0.0], 2.0).unwrap();
        assert!((d.exit_distance([0.5, 0.0], [1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert!((d.exit_distance([1.5, 0.0], [-2.0, 0.0]) - 1.5).abs() < 1e-15);
        assert!((d.boundary_distance([1.0, 0.0]) - 1.5).abs() < 1e-15);
        assert!(d.contains([2.4, 0.0]) && !d.contains([2.6, 0.0]));
    }

    #[test]
    fn rotated_ellipse_exit_lands_on_boundary() {
        let d = Domain::ellipse([0.1, -0.2], [2.0, 0.5], 0.7).unwrap();
        for k in 0..32 {
            let th = k as f64 * 0.2;
            let dir = [th.cos(), th.sin()];
            let p = [0.3, -0.1];
            let t = d.exit_distance(p, dir);
            let q = [p[0] + t * dir[0], p[1] + t * dir[1]];
            assert!(d.level(q).abs() < 1e-12);
            assert!(d.boundary_distance(q) < 1e-9);
        }
    }

    #[test]
    fn ellipse_boundary_distance_matches_sampling() {
        let d = Domain::ellipse([0.0, 0.0], [2.0, 1.0], 0.0).unwrap();
        let p = [0.7, 0.2];
        let brute = d.boundary_samples(1e-4).iter().map(|q| (q[0] - p[0]).hypot(q[1] - p[1])).fold(f64::INFINITY, f64::min);
        assert!((d.boundary_distance(p) - brute).abs() < 1e-6);
    }
}
