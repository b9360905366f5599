use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::domain::Domain;
use crate::error::{Error, Result};
use crate::field::ScalarField;

/// ∫ det D²u over the valid nodes. Nodes too close to the mask edge for a centered stencil borrow the
/// determinant of the nearest node that has one.
pub fn ma_measure(u: &ScalarField) -> f64 {
    let g = u.grid();
    let dets: Vec<Option<f64>> = (0..g.len()).map(|k| u.hessian_node(k % g.nx, k / g.nx, 1).map(|h| h.determinant().max(0.0))).collect();
    let mut total = 0.0;
    for k in 0..g.len() {
        if !u.valid_mask()[k] {
            continue;
        }
        let (i, j) = ((k % g.nx) as isize, (k / g.nx) as isize);
        let det = dets[k].or_else(|| {
            (1..=4isize).find_map(|rad| {
                let mut best: Option<(isize, f64)> = None;
                for dj in -rad..=rad {
                    for di in -rad..=rad {
                        let (a, b) = (i + di, j + dj);
                        if a < 0 || b < 0 || a >= g.nx as isize || b >= g.ny as isize {
                            continue;
                        }
                        if let Some(d) = dets[b as usize * g.nx + a as usize] {
                            let d2 = di * di + dj * dj;
                            if best.is_none_or(|(bd, _)| d2 < bd) {
                                best = Some((d2, d));
                            }
                        }
                    }
                }
                best.map(|(_, d)| d)
            })
        });
        total += det.unwrap_or(0.0);
    }
    total * g.spacing * g.spacing
}

/// max over interior nodes of |u(x)|ⁿ / (diam^{n−1} · dist(x, ∂Ω) · ∫ det D²u), n = 2.
pub fn alexandrov_ratio(u: &ScalarField, domain: &Domain) -> Result<f64> {
    let scale = u.valid_nodes().map(|(_, _, v)| v.abs()).fold(0.0, f64::max);
    if let Some((_, p, v)) = u.valid_nodes().find(|(_, _, v)| *v > 1e-12 * scale.max(1e-300)) {
        return Err(Error::Contract(format!("field is positive ({v:.3e}) at ({:.4}, {:.4})", p[0], p[1])));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let integral = ma_measure(u);
    if !(integral > 0.0) {
        return Err(Error::Contract("Monge–Ampère measure of the field vanishes".into()));
    }
    let diam = domain.diameter();
    let mut best: f64 = 0.0;
    for (_, p, v) in u.valid_nodes() {
        let d = domain.boundary_distance(p);
        if d > 0.0 && domain.contains(p) {
            best = best.max(v * v / (diam * d * integral));
        }
    }
    Ok(best)
}

/// Largest value of |u(x₁) − u(x₂)|ⁿ / (ratio · diam^{n−1} · ∫ det D²u · |x₁ − x₂|) over the given node pairs.
///
/// Separation holds on the sample when the result is at most 1.
pub fn separation_check(u: &ScalarField, domain: &Domain, ratio: f64, pairs: &[(usize, usize)]) -> Result<f64> {
    let integral = ma_measure(u);
    let denom = ratio * domain.diameter() * integral;
    if !(denom > 0.0) {
        return Err(Error::Contract("separation needs a positive ratio and measure".into()));
    }
    let mut worst: f64 = 0.0;
    for &(a, b) in pairs {
        if !(u.valid_mask()[a] && u.valid_mask()[b]) || a == b {
            continue;
        }
        let (pa, pb) = (u.grid().node_at(a), u.grid().node_at(b));
        let dv = u.values()[a] - u.values()[b];
        worst = worst.max(dv * dv / (denom * (pa[0] - pb[0]).hypot(pa[1] - pb[1])));
    }
    Ok(worst)
}

/// Measured quantities around the difference estimate for two unit solutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceDiagnostics {
    pub lambda: f64,
    pub big_lambda: f64,
    /// sup over B_r of |b w − b′ w′|.
    pub delta: f64,
    /// r₀² sup|D²(w − w′)| + r₀^{2+α} [D²(w − w′)]_α over B_{r−r₀}.
    pub lhs: f64,
    /// (δ + r²|b − b′|)/(b + b′).
    pub bracket: f64,
    /// lhs / bracket; stands in for C λ^{−β̃₁} Λ^{β₁−β̃₁} (1 + r^α C_α).
    pub ratio: f64,
    /// sup over B_r of |D²(b w − b′ w′)|.
    pub max_d2_scaled_diff: f64,
    /// Largest excess of |D²(bw − b′w′)| over ½(b+b′)|D²(w−w′)| + Λ|b−b′|; nonpositive when the remark holds.
    pub remark_excess: f64,
}

fn op_norm(m: &Matrix2<f64>) -> f64 {
    m.symmetric_eigenvalues().amax()
}

/// Evaluates both sides of the difference estimate on balls about `center`.
///
/// `window`, if given, is the ellipticity window [λ, Λ] the measured Hessians must respect.
#[allow(clippy::too_many_arguments)]
pub fn difference_estimate_check(
    w: &ScalarField,
    w2: &ScalarField,
    b: f64,
    b2: f64,
    r: f64,
    r0: f64,
    center: [f64; 2],
    alpha: f64,
    window: Option<(f64, f64)>,
) -> Result<DifferenceDiagnostics> {
    if w.grid() != w2.grid() {
        return Err(Error::Domain("fields must share a grid".into()));
    }
    if !(b > 0.0 && b2 > 0.0 && r > 0.0 && r0 > 0.0 && r0 < r) {
        return Err(Error::Domain("need b, b′, r > 0 and 0 < r₀ < r".into()));
    }
    let g = w.grid();
    let step = 2;
    let mut lambda = f64::INFINITY;
    let mut big_lambda: f64 = 0.0;
    let mut delta: f64 = 0.0;
    let mut inner: Vec<([f64; 2], Matrix2<f64>)> = Vec::new();
    let mut max_scaled: f64 = 0.0;
    let mut hessians = Vec::new();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let p = g.node(i, j);
            let dist = (p[0] - center[0]).hypot(p[1] - center[1]);
            if dist >= r {
                continue;
            }
            let (Some(a), Some(a2)) = (w.at(i, j), w2.at(i, j)) else {
                return Err(Error::Proximity(format!("B_r leaves the valid region at ({:.4}, {:.4})", p[0], p[1])));
            };
            delta = delta.max((b * a - b2 * a2).abs());
            let (Some(h), Some(h2)) = (w.hessian_node(i, j, step), w2.hessian_node(i, j, step)) else {
                if dist < r - r0 {
                    return Err(Error::Proximity(format!("Hessian stencil leaves the valid region at ({:.4}, {:.4})", p[0], p[1])));
                }
                continue;
            };
            for m in [&h, &h2] {
                let e = m.symmetric_eigenvalues();
                lambda = lambda.min(e.min());
                big_lambda = big_lambda.max(e.max());
            }
            max_scaled = max_scaled.max(op_norm(&(h * b - h2 * b2)));
            hessians.push((h, h2));
            if dist < r - r0 {
                inner.push((p, h - h2));
            }
        }
    }
    if inner.is_empty() {
        return Err(Error::Domain("B_{r−r₀} contains no grid nodes".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Precondition(format!("Hessian not positive definite (λ = {lambda:.3e})")));
    }
    if let Some((lo, hi)) = window {
        if lambda < lo || big_lambda > hi {
            return Err(Error::Precondition(format!(
                "ellipticity window [{lo}, {hi}] violated by measured [{lambda:.4}, {big_lambda:.4}]"
            )));
        }
    }
    let mut remark_excess = f64::NEG_INFINITY;
    for (h, h2) in &hessians {
        let lhs = op_norm(&(h * b - h2 * b2));
        let rhs = 0.5 * (b + b2) * op_norm(&(h - h2)) + big_lambda * (b - b2).abs();
        remark_excess = remark_excess.max(lhs - rhs);
    }
    let c0 = inner.iter().map(|(_, d)| op_norm(d)).fold(0.0, f64::max);
    let mut holder: f64 = 0.0;
    let stride = (inner.len() / 3000).max(1);
    let sample: Vec<&([f64; 2], Matrix2<f64>)> = inner.iter().step_by(stride).collect();
    for (k, (p, d)) in sample.iter().enumerate() {
        for (q, e) in &sample[k + 1..] {
            let dist = (p[0] - q[0]).hypot(p[1] - q[1]);
            holder = holder.max(op_norm(&(d - e)) / dist.powf(alpha));
        }
    }
    let lhs = r0 * r0 * c0 + r0.powf(2.0 + alpha) * holder;
    let bracket = (delta + r * r * (b - b2).abs()) / (b + b2);
    let ratio = if bracket > 0.0 { lhs / bracket } else { 0.0 };
    Ok(DifferenceDiagnostics { lambda, big_lambda, delta, lhs, bracket, ratio, max_d2_scaled_diff: max_scaled, remark_excess })
}

/// Largest value of u₂ − u₁ over shared valid nodes.
///
/// With f₁ ≤ f₂ and equal boundary data the comparison principle gives u₁ ≥ u₂, so the result should be
/// nonpositive up to discretization noise.
pub fn comparison_violation(u1: &ScalarField, u2: &ScalarField) -> Result<f64> {
    if u1.grid() != u2.grid() {
        return Err(Error::Domain("fields must share a grid".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    for (k, _, a) in u1.valid_nodes() {
        if u2.valid_mask()[k] {
            worst = worst.max(u2.values()[k] - a);
        }
    }
    if worst == f64::NEG_INFINITY {
        return Err(Error::Domain("fields share no valid nodes".into()));
    }
    Ok(worst)
}

/// Minimum and comparison estimates for a solution u with sup|f − 1| = δ against the unit solution w on
/// a domain with B_{r₁}(ξ₁) ⊆ Ω ⊆ B_{r₂}(ξ₂).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimumEstimates {
    pub r1: f64,
    pub r2: f64,
    pub delta: f64,
    pub min_u: f64,
    pub min_w: f64,
    pub sup_diff: f64,
}

impl MinimumEstimates {
    /// −r₂²/2 − tol ≤ min w ≤ −r₁²/2 + tol.
    pub fn minimum_ok(&self, tol: f64) -> bool {
        self.min_w >= -0.5 * self.r2 * self.r2 - tol && self.min_w <= -0.5 * self.r1 * self.r1 + tol
    }

    /// sup|u − w| ≤ r₂²δ/2 + tol.
    pub fn difference_ok(&self, tol: f64) -> bool {
        self.sup_diff <= 0.5 * self.r2 * self.r2 * self.delta + tol
    }

    /// |min u − min w| ≤ sup|u − w| + tol.
    pub fn min_gap_ok(&self, tol: f64) -> bool {
        (self.min_u - self.min_w).abs() <= self.sup_diff + tol
    }
}

pub fn minimum_estimates(u: &ScalarField, w: &ScalarField, delta: f64, r1: f64, r2: f64) -> Result<MinimumEstimates> {
    if !(r1 > 0.0 && r2 >= r1 && delta >= 0.0) {
        return Err(Error::Domain(format!("need 0 < r₁ ≤ r₂ and δ ≥ 0, got r₁ = {r1}, r₂ = {r2}, δ = {delta}")));
    }
    let sup_diff = u.max_abs_diff(w)?;
    let (Some((min_u, _)), Some((min_w, _))) = (u.min(), w.min()) else {
        return Err(Error::Domain("empty field".into()));
    };
    Ok(MinimumEstimates { r1, r2, delta, min_u, min_w, sup_diff })
}

/// Level s and regression window [λ̂, Λ̂] for unit solves on normalized domains, fitted on 20 random
/// normalized polygons at 129 nodes (largest measured Λ was 19.4).
pub const POGORELOV_LEVEL: f64 = 0.05;
pub const POGORELOV_WINDOW: (f64, f64) = (0.04, 25.0);

/// Hessian eigenvalue window of a unit solution on {w < −2s}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PogorelovWindow {
    /// 1/Λ, the smallest eigenvalue compatible with det D²w = 1.
    pub lambda: f64,
    /// Largest finite-difference eigenvalue.
    pub big_lambda: f64,
    /// Smallest finite-difference eigenvalue; unreliable where the Hessian is strongly anisotropic.
    pub fd_min: f64,
    pub nodes: usize,
}

impl PogorelovWindow {
    pub fn within(&self, window: (f64, f64)) -> bool {
        self.lambda >= window.0 && self.big_lambda <= window.1
    }
}

/// Hessian eigenvalues of `w` over the nodes of {w < −2s} whose step-2 stencil lies in {w < −s}.
pub fn pogorelov_window(w: &ScalarField, s: f64) -> Result<PogorelovWindow> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("window level must be positive, got {s}")));
    }
    let g = w.grid();
    let (mut lo, mut hi, mut nodes) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    for (k, _, v) in w.valid_nodes() {
        if v >= -2.0 * s {
            continue;
        }
        let (i, j) = g.coords(k);
        let inside = (-2isize..=2).step_by(2).all(|di| {
            (-2isize..=2).step_by(2).all(|dj| {
                let (a, b) = (i as isize + di, j as isize + dj);
                a >= 0 && b >= 0 && (a as usize) < g.nx && (b as usize) < g.ny && w.at(a as usize, b as usize).is_some_and(|x| x < -s)
            })
        });
        if !inside {
            continue;
        }
        if let Some(h) = w.hessian_node(i, j, 2) {
            let e = h.symmetric_eigenvalues();
            lo = lo.min(e.min());
            hi = hi.max(e.max());
            nodes += 1;
        }
    }
    if nodes == 0 {
        return Err(Error::Domain(format!("sublevel set {{w < {}}} has no interior stencils", -2.0 * s)));
    }
    Ok(PogorelovWindow { lambda: 1.0 / hi, big_lambda: hi, fd_min: lo, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    fn disk() -> Domain {
        Domain::disk([0.0, 0.0], 1.0).unwrap()
    }

    fn paraboloid() -> ScalarField {
        let g = Grid::covering([-1.0, -1.0], [1.0, 1.0], 81).unwrap();
        ScalarField::from_fn(g, |p| 0.5 * (p[0] * p[0] + p[1] * p[1] - 1.0), |p| p[0].hypot(p[1]) < 1.0).unwrap()
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let u = paraboloid();
        let r1 = alexandrov_ratio(&u, &disk()).unwrap();
        let r3 = alexandrov_ratio(&u.map(|_, v| 3.0 * v), &disk()).unwrap();
        assert!(r1 > 0.0 && r1.is_finite());
        assert!((r1 - r3).abs() <= 1e-10 * r1);
        // direct evaluation: maximum of (1−s)(1+s)²/(8·∫det) at s = 1/3 with ∫det ≈ π
        let direct = (2.0 / 3.0) * (16.0 / 9.0) / 4.0 / (2.0 * std::f64::consts::PI);
        assert!((r1 - direct).abs() < 0.02 * direct, "{r1} vs {direct}");
    }

    #[test]
    fn zero_field_has_zero_ratio_and_positive_field_is_rejected() {
        let z = paraboloid().map(|_, _| 0.0);
        assert_eq!(alexandrov_ratio(&z, &disk()).unwrap(), 0.0);
        let pos = paraboloid().map(|_, v| -v);
        assert!(matches!(alexandrov_ratio(&pos, &disk()), Err(Error::Contract(_))));
    }

    #[test]
    fn separation_holds_on_paraboloid() {
        let u = paraboloid();
        let ratio = alexandrov_ratio(&u, &disk()).unwrap();
        let nodes: Vec<usize> = u.valid_nodes().map(|(k, _, _)| k).collect();
        let pairs: Vec<(usize, usize)> = nodes.iter().step_by(7).flat_map(|&a| nodes.iter().step_by(131).map(move |&b| (a, b))).collect();
        assert!(separation_check(&u, &disk(), ratio, &pairs).unwrap() <= 1.0);
    }

    #[test]
    fn identical_fields_have_zero_differences() {
        let u = paraboloid();
        let d = difference_estimate_check(&u, &u, 1.3, 1.3, 0.5, 0.2, [0.0, 0.0], 0.5, None).unwrap();
        assert_eq!((d.delta, d.lhs, d.bracket, d.max_d2_scaled_diff), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn quadratic_pair_matches_closed_form() {
        let g = Grid::covering([-1.0, -1.0], [1.0, 1.0], 81).unwrap();
        let m = Matrix2::new(1.1, 0.1, 0.1, (1.0 + 0.01) / 1.1);
        let w = ScalarField::from_fn(g, |p| 0.5 * (p[0] * p[0] + p[1] * p[1]), |_| true).unwrap();
        let w2 = ScalarField::from_fn(
            g,
            |p| 0.5 * (m[(0, 0)] * p[0] * p[0] + 2.0 * m[(0, 1)] * p[0] * p[1] + m[(1, 1)] * p[1] * p[1]),
            |_| true,
        )
        .unwrap();
        let (b, b2) = (1.0, 1.05);
        let d = difference_estimate_check(&w, &w2, b, b2, 0.6, 0.2, [0.0, 0.0], 0.5, Some((0.5, 2.0))).unwrap();
        let exact = op_norm(&(Matrix2::identity() * b - m * b2));
        assert!((d.max_d2_scaled_diff - exact).abs() < 1e-9);
        assert!(d.remark_excess <= 1e-12);
        assert!(matches!(
            difference_estimate_check(&w, &w2, b, b2, 0.6, 0.2, [0.0, 0.0], 0.5, Some((1.05, 2.0))),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn comparison_of_nested_paraboloids() {
        let u = paraboloid();
        let lower = u.map(|_, v| 1.2 * v);
        assert!(comparison_violation(&u, &lower).unwrap() <= 0.0);
        assert!(comparison_violation(&lower, &u).unwrap() > 0.0);
    }

    #[test]
    fn minimum_estimates_on_scaled_paraboloid() {
        let w = paraboloid();
        let u = w.map(|_, v| 1.05 * v);
        let m = minimum_estimates(&u, &w, 0.05, 1.0, 1.0).unwrap();
        assert!(m.minimum_ok(1e-12) && m.difference_ok(1e-12) && m.min_gap_ok(1e-12));
        assert!((m.sup_diff - 0.025).abs() < 1e-12);
        let win = pogorelov_window(&w, 0.05).unwrap();
        assert!((win.fd_min - 1.0).abs() < 1e-10 && (win.big_lambda - 1.0).abs() < 1e-10 && win.within(POGORELOV_WINDOW));
        assert!(pogorelov_window(&w, 1.0).is_err());
    }
}
