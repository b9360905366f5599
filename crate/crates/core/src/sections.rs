//! Sections S(v, h, x) of convex grid functions: extraction, first-section height and normalization.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Grid, Interp, ScalarField};
use crate::geometry::{convex_hull_2d, dist2, normalize_domain, AffineMap, ConvexPolytope};

/// Finite-difference step (cells) for the supporting plane.
const PLANE_STEP: usize = 2;
/// Below this many interior nodes a section is re-extracted on a refined local grid.
const MIN_INTERIOR: usize = 400;

/// A sublevel set of v above its supporting plane at `center`.
#[derive(Clone, Debug, Serialize)]
pub struct Section {
    pub center: [f64; 2],
    pub height: f64,
    /// v(center).
    pub value: f64,
    /// Dv(center).
    pub gradient: [f64; 2],
    #[serde(skip)]
    pub boundary: ConvexPolytope,
    /// Largest distance from a raw contour point to the hull boundary.
    pub hull_deviation: f64,
    /// Spacing of the grid the contour was traced on.
    pub spacing: f64,
    pub normalizer: AffineMap,
    /// B_{r₁}(ξ₁) ⊆ T·S, as (ξ₁, r₁).
    pub inner: ([f64; 2], f64),
    /// T·S ⊆ B_{r₂}(ξ₂), as (ξ₂, r₂).
    pub outer: ([f64; 2], f64),
}

impl Section {
    pub fn diameter(&self) -> f64 {
        self.boundary.diameter()
    }
}

/// Supporting plane of v at x as (v(x), Dv(x)).
pub fn supporting_plane(v: &ScalarField, x: [f64; 2]) -> Result<(f64, [f64; 2])> {
    let value = v
        .interpolate(x, Interp::Biquadratic)
        .ok_or_else(|| Error::Proximity(format!("({:.4}, {:.4}) is outside the valid region", x[0], x[1])))?;
    Ok((value, v.gradient_at(x, PLANE_STEP)?))
}

enum Trace {
    Points(Vec<[f64; 2]>, usize),
    /// The component reached an invalid node.
    Invalid,
    /// The component reached the edge of the grid.
    Edge,
    /// The node nearest to x is not below the level.
    Unresolved,
}

/// Marching-squares crossings of the component of {v − plane < h} containing x.
fn trace(v: &ScalarField, x: [f64; 2], plane: (f64, [f64; 2]), h: f64) -> Trace {
    let g = v.grid();
    let tilt = |k: usize| {
        let p = g.node_at(k);
        v.values()[k] - plane.0 - plane.1[0] * (p[0] - x[0]) - plane.1[1] * (p[1] - x[1]) - h
    };
    let Some((i0, j0)) = g.nearest(x) else { return Trace::Unresolved };
    let seed = g.index(i0, j0);
    if !v.valid_mask()[seed] || tilt(seed) >= 0.0 {
        return Trace::Unresolved;
    }
    let mut inside = vec![false; g.len()];
    inside[seed] = true;
    let mut queue = VecDeque::from([seed]);
    let mut points = Vec::new();
    let mut count = 0;
    while let Some(k) = queue.pop_front() {
        count += 1;
        let (i, j) = g.coords(k);
        let tk = tilt(k);
        let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
        for (a, b) in nbrs {
            if a >= g.nx || b >= g.ny {
                return Trace::Edge;
            }
            let m = g.index(a, b);
            if !v.valid_mask()[m] {
                return Trace::Invalid;
            }
            if inside[m] {
                continue;
            }
            let tm = tilt(m);
            if tm < 0.0 {
                inside[m] = true;
                queue.push_back(m);
            } else {
                let s = tk / (tk - tm);
                let (p, q) = (g.node_at(k), g.node_at(m));
                points.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
            }
        }
    }
    Trace::Points(points, count)
}

/// Resamples v on the box x ± half with the given spacing.
fn local_field(v: &ScalarField, x: [f64; 2], half: f64, spacing: f64) -> Result<ScalarField> {
    let grid = Grid::aligned([x[0] - half, x[1] - half], [x[0] + half, x[1] + half], spacing, x)?;
    let mut values = vec![f64::NAN; grid.len()];
    let mut valid = vec![false; grid.len()];
    for k in 0..grid.len() {
        if let Some(s) = v.interpolate(grid.node_at(k), Interp::Biquadratic) {
            values[k] = s;
            valid[k] = true;
        }
    }
    ScalarField::new(grid, values, valid)
}

/// Raw contour points of S(v, h, x) and the spacing they were traced at.
fn outline(v: &ScalarField, x: [f64; 2], plane: (f64, [f64; 2]), h: f64) -> Result<(Vec<[f64; 2]>, f64)> {
    let spacing = v.grid().spacing;
    let containment = || Error::Containment(format!("S(v, {h:.4e}, ({:.4}, {:.4})) reaches the edge of the valid region", x[0], x[1]));
    match trace(v, x, plane, h) {
        Trace::Invalid | Trace::Edge => return Err(containment()),
        Trace::Points(p, count) if count >= MIN_INTERIOR => return Ok((p, spacing)),
        _ => {}
    }
    // Under-resolved: estimate the radius from the Hessian and trace on a finer local grid.
    let lam = v.hessian_at(x, PLANE_STEP).map(|m| m.symmetric_eigenvalues().min()).unwrap_or(0.0);
    let mut radius = if lam > 0.0 { (2.0 * h / lam).sqrt() } else { 4.0 * spacing };
    for _ in 0..8 {
        let fine = (radius / 16.0).min(spacing / 2.0);
        let local = local_field(v, x, 1.5 * radius + 2.0 * fine, fine)?;
        match trace(&local, x, plane, h) {
            Trace::Points(p, _) => return Ok((p, fine)),
            Trace::Invalid => return Err(containment()),
            Trace::Edge => radius *= 2.0,
            Trace::Unresolved => radius *= 0.5,
        }
    }
    Err(Error::Resolution(format!("could not resolve S(v, {h:.4e}, ({:.4}, {:.4}))", x[0], x[1])))
}

/// Boundary polygon of S(v, h, x) with the hull deviation and tracing spacing.
pub fn section_polygon(v: &ScalarField, x: [f64; 2], h: f64) -> Result<(ConvexPolytope, f64, f64)> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("section height must be positive, got {h}")));
    }
    let plane = supporting_plane(v, x)?;
    polygon_with_plane(v, x, plane, h)
}

fn polygon_with_plane(v: &ScalarField, x: [f64; 2], plane: (f64, [f64; 2]), h: f64) -> Result<(ConvexPolytope, f64, f64)> {
    let (points, spacing) = outline(v, x, plane, h)?;
    let hull = ConvexPolytope::from_points_2d(&convex_hull_2d(&points))?;
    let deviation = points.iter().map(|&p| hull.boundary_distance_2d(p)).fold(0.0, f64::max);
    if !hull.contains_2d(x, -1e-12) {
        return Err(Error::Degenerate("section center is not interior to its hull".into()));
    }
    Ok((hull, deviation, spacing))
}

/// Extracts S(v, h, x) with a John-type normalizer sending it between B₁ and B_n.
pub fn extract_section(v: &ScalarField, x: [f64; 2], h: f64) -> Result<Section> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("section height must be positive, got {h}")));
    }
    let plane = supporting_plane(v, x)?;
    section_with_plane(v, x, plane, h)
}

/// As [`extract_section`] with a caller-supplied supporting plane.
pub fn section_with_plane(v: &ScalarField, x: [f64; 2], plane: (f64, [f64; 2]), h: f64) -> Result<Section> {
    let (boundary, hull_deviation, spacing) = polygon_with_plane(v, x, plane, h)?;
    let (normalizer, image) = normalize_domain(&boundary)?;
    let origin = [0.0, 0.0];
    let r1 = image.inradius_about(origin);
    let r2 = image.circumradius_about(&origin);
    Ok(Section {
        center: x,
        height: h,
        value: plane.0,
        gradient: plane.1,
        boundary,
        hull_deviation,
        spacing,
        normalizer,
        inner: (origin, r1),
        outer: (origin, r2),
    })
}

/// Distance from x to the nearest invalid node or grid edge.
fn clearance(v: &ScalarField, x: [f64; 2]) -> f64 {
    let g = v.grid();
    let up = g.upper();
    let mut d = (x[0] - g.origin[0]).min(x[1] - g.origin[1]).min(up[0] - x[0]).min(up[1] - x[1]);
    for k in 0..g.len() {
        if !v.valid_mask()[k] {
            d = d.min(dist2(g.node_at(k), x));
        }
    }
    d.max(0.0)
}

/// Largest h (by 30 bisection steps on [h_grid², osc v]) with S(v, h, x) ⊆ B_ρ(x).
pub fn first_section_height(v: &ScalarField, x: [f64; 2], rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {rho}")));
    }
    let spacing = v.grid().spacing;
    if clearance(v, x) < 4.0 * spacing {
        return Err(Error::Proximity(format!("({:.4}, {:.4}) is within 4 cells of the boundary", x[0], x[1])));
    }
    let plane = supporting_plane(v, x)?;
    let fits = |h: f64| -> Result<bool> {
        match outline(v, x, plane, h) {
            Ok((pts, _)) => Ok(pts.iter().all(|&p| dist2(p, x) <= rho)),
            Err(Error::Containment(_)) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let (lo_v, hi_v) = (v.min().expect("valid nodes").0, v.max().expect("valid nodes").0);
    let mut lo = spacing * spacing;
    let mut hi = hi_v - lo_v;
    if !fits(lo)? {
        return Err(Error::Resolution(format!("S(v, h_grid², x) already leaves B_{rho}(x)")));
    }
    if fits(hi)? {
        return Ok(hi);
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// max over rays from x of |x − y_{1/2}| / |x − y₁| with y_h on ∂S(v, h, x).
pub fn section_ratio(v: &ScalarField, x: [f64; 2], h: f64, rays: usize) -> Result<f64> {
    let plane = supporting_plane(v, x)?;
    let (full, _, _) = polygon_with_plane(v, x, plane, h)?;
    let (half, _, _) = polygon_with_plane(v, x, plane, 0.5 * h)?;
    let mut worst: f64 = 0.0;
    for k in 0..rays.max(1) {
        let t = std::f64::consts::TAU * k as f64 / rays.max(1) as f64;
        let d = [t.cos(), t.sin()];
        worst = worst.max(half.exit_distance_2d(x, d) / full.exit_distance_2d(x, d));
    }
    Ok(worst)
}

/// diam S(v, h/2, x) / diam S(v, h, x).
pub fn diameter_ratio(v: &ScalarField, x: [f64; 2], h: f64) -> Result<f64> {
    let plane = supporting_plane(v, x)?;
    let (full, _, _) = polygon_with_plane(v, x, plane, h)?;
    let (half, _, _) = polygon_with_plane(v, x, plane, 0.5 * h)?;
    Ok(half.diameter() / full.diameter())
}

/// Measured sides of the first-section transform estimates.
#[derive(Clone, Debug, Serialize)]
pub struct SectionDiagnostics {
    pub r1: f64,
    pub r2: f64,
    /// det^{2/n}T · h.
    pub det_height: f64,
    /// ½r₁² ≤ det^{2/n}T·h ≤ ½r₂² f_max.
    pub det_bounds: (f64, f64),
    pub det_ok: bool,
    /// ‖T⁻¹‖ against diam(S)/(2r₁).
    pub norm_inv: f64,
    pub norm_inv_bound: f64,
    pub norm_inv_ok: bool,
    pub diameter: f64,
    /// √(8h)‖T̆⁻¹‖/diam(S) with its two-sided bounds r₁/r₂ and (r₂/r₁)f_max^{1/2}.
    pub diam_ratio: f64,
    pub diam_bounds: (f64, f64),
    pub diam_ok: bool,
}

/// Normalizer of a section with the estimates it must satisfy for 1 ≤ f ≤ f_max, each checked
/// with relative slack `tol`.
pub fn normalize_section(s: &Section, f_max: f64, tol: f64) -> Result<(AffineMap, SectionDiagnostics)> {
    let t = s.normalizer.clone();
    let (r1, r2) = (s.inner.1, s.outer.1);
    if !(r1 > 0.0) {
        return Err(Error::Degenerate("normalized section has empty interior about its center".into()));
    }
    let det_height = t.det().abs() * s.height;
    let det_bounds = (0.5 * r1 * r1, 0.5 * r2 * r2 * f_max);
    let norm_inv = t.norm_inv();
    let diameter = s.diameter();
    let norm_inv_bound = diameter / (2.0 * r1);
    let diam_ratio = (8.0 * s.height).sqrt() * t.stats().norm_inv / diameter;
    let diam_bounds = (r1 / r2, r2 / r1 * f_max.sqrt());
    let within = |x: f64, (lo, hi): (f64, f64)| x >= lo * (1.0 - tol) && x <= hi * (1.0 + tol);
    let diag = SectionDiagnostics {
        r1,
        r2,
        det_height,
        det_bounds,
        det_ok: within(det_height, det_bounds),
        norm_inv,
        norm_inv_bound,
        norm_inv_ok: norm_inv <= norm_inv_bound * (1.0 + tol),
        diameter,
        diam_ratio,
        diam_bounds,
        diam_ok: within(diam_ratio, diam_bounds),
    };
    Ok((t, diag))
}
