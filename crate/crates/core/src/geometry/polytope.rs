use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::affine::AffineMap;
use super::lp::in_convex_hull;
use crate::error::{Error, Result};

const MERGE_TOL: f64 = 1e-12;

/// Convex polytope stored by its extreme points; counterclockwise in 2-D.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexPolytope {
    vertices: Vec<Vec<f64>>,
    #[serde(skip)]
    halfplanes: Vec<([f64; 2], f64)>,
}

impl PartialEq for ConvexPolytope {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
    }
}

/// Monotone-chain hull of 2-D points, counterclockwise, collinear points dropped.
pub fn convex_hull_2d(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut merged: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for p in pts {
        if let Some(q) = merged.last() {
            if (p[0] - q[0]).abs() <= MERGE_TOL && (p[1] - q[1]).abs() <= MERGE_TOL {
                continue;
            }
        }
        merged.push(p);
    }
    if merged.len() < 3 {
        return merged;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * merged.len());
    for &p in &merged {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in merged.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

impl ConvexPolytope {
    /// Builds the polytope spanned by `points`, keeping only extreme points.
    pub fn new(points: &[DVector<f64>]) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Degenerate("empty vertex list".into()));
        };
        let n = first.len();
        if n < 2 {
            return Err(Error::Domain("dimension must be at least 2".into()));
        }
        if points.iter().any(|p| p.len() != n) {
            return Err(Error::Domain("vertices have mixed dimensions".into()));
        }
        if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::Domain("non-finite vertex coordinate".into()));
        }
        if n == 2 {
            let pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
            return Self::from_points_2d(&pts);
        }
        let mut uniq: Vec<DVector<f64>> = Vec::new();
        for p in points {
            if !uniq.iter().any(|q| (q - p).amax() <= MERGE_TOL) {
                uniq.push(p.clone());
            }
        }
        if uniq.len() < n + 1 || affine_rank(&uniq) < n {
            return Err(Error::Degenerate(format!("points do not span {n} dimensions")));
        }
        let mut keep = vec![true; uniq.len()];
        for i in 0..uniq.len() {
            let others: Vec<DVector<f64>> = uniq.iter().enumerate().filter(|&(j, _)| j != i && keep[j]).map(|(_, q)| q.clone()).collect();
            if in_convex_hull(&others, &uniq[i], 1e-12) {
                keep[i] = false;
            }
        }
        let vertices = uniq.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| p.iter().copied().collect()).collect();
        Ok(Self { vertices, halfplanes: Vec::new() })
    }

    /// Planar constructor; the hull is taken and stored counterclockwise.
    pub fn from_points_2d(points: &[[f64; 2]]) -> Result<Self> {
        let hull = convex_hull_2d(points);
        if hull.len() < 3 {
            return Err(Error::Degenerate("fewer than three non-collinear points".into()));
        }
        let mut poly = Self { vertices: hull.iter().map(|p| p.to_vec()).collect(), halfplanes: Vec::new() };
        let diam = poly.diameter();
        if poly.area_2d() <= 1e-14 * diam * diam {
            return Err(Error::Degenerate("polygon has no interior".into()));
        }
        poly.build_halfplanes();
        Ok(poly)
    }

    fn build_halfplanes(&mut self) {
        let v = self.vertices_2d();
        let m = v.len();
        self.halfplanes = (0..m)
            .map(|i| {
                let a = v[i];
                let b = v[(i + 1) % m];
                let e = [b[0] - a[0], b[1] - a[1]];
                let len = e[0].hypot(e[1]);
                let nrm = [e[1] / len, -e[0] / len];
                (nrm, nrm[0] * a[0] + nrm[1] * a[1])
            })
            .collect();
    }

    /// Restores derived data after deserialization.
    pub fn rebuild(self) -> Result<Self> {
        let pts: Vec<DVector<f64>> = self.vertices.iter().map(|v| DVector::from_column_slice(v)).collect();
        Self::new(&pts)
    }

    /// Regular polygon with `sides` vertices on the circle of the given radius.
    pub fn regular(sides: usize, center: [f64; 2], radius: f64, phase: f64) -> Result<Self> {
        let pts: Vec<[f64; 2]> = (0..sides)
            .map(|k| {
                let t = phase + 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect();
        Self::from_points_2d(&pts)
    }

    /// Polygon inscribed in the ellipse with semi-axes `(a, b)` rotated by `angle`.
    pub fn ellipse(center: [f64; 2], a: f64, b: f64, angle: f64, sides: usize) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        let pts: Vec<[f64; 2]> = (0..sides)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                let (x, y) = (a * t.cos(), b * t.sin());
                [center[0] + c * x - s * y, center[1] + s * x + c * y]
            })
            .collect();
        Self::from_points_2d(&pts)
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> Vec<DVector<f64>> {
        self.vertices.iter().map(|v| DVector::from_column_slice(v)).collect()
    }

    /// Vertices as planar points; panics outside 2-D.
    pub fn vertices_2d(&self) -> Vec<[f64; 2]> {
        assert_eq!(self.dim(), 2, "planar accessor on a {}-D polytope", self.dim());
        self.vertices.iter().map(|v| [v[0], v[1]]).collect()
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                d = d.max(s.sqrt());
            }
        }
        d
    }

    pub fn area_2d(&self) -> f64 {
        let v = self.vertices_2d();
        let m = v.len();
        0.5 * (0..m).map(|i| v[i][0] * v[(i + 1) % m][1] - v[(i + 1) % m][0] * v[i][1]).sum::<f64>()
    }

    pub fn centroid_2d(&self) -> [f64; 2] {
        let v = self.vertices_2d();
        let m = v.len();
        let (mut cx, mut cy, mut a) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let (p, q) = (v[i], v[(i + 1) % m]);
            let w = p[0] * q[1] - q[0] * p[1];
            a += w;
            cx += (p[0] + q[0]) * w;
            cy += (p[1] + q[1]) * w;
        }
        [cx / (3.0 * a), cy / (3.0 * a)]
    }

    /// Maximum of the edge functionals; negative inside, equal to minus the boundary distance there.
    pub fn signed_distance_2d(&self, p: [f64; 2]) -> f64 {
        self.halfplanes.iter().map(|(n, c)| n[0] * p[0] + n[1] * p[1] - c).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains_2d(&self, p: [f64; 2], tol: f64) -> bool {
        self.signed_distance_2d(p) <= tol
    }

    /// Distance from `p` to the boundary polygon (inside or outside).
    pub fn boundary_distance_2d(&self, p: [f64; 2]) -> f64 {
        let v = self.vertices_2d();
        let m = v.len();
        (0..m).map(|i| point_segment_distance(p, v[i], v[(i + 1) % m])).fold(f64::INFINITY, f64::min)
    }

    /// Smallest t > 0 with p + t·d on the boundary, for p inside.
    pub fn exit_distance_2d(&self, p: [f64; 2], d: [f64; 2]) -> f64 {
        let mut t = f64::INFINITY;
        for (n, c) in &self.halfplanes {
            let nd = n[0] * d[0] + n[1] * d[1];
            if nd > 0.0 {
                t = t.min((c - n[0] * p[0] - n[1] * p[1]) / nd);
            }
        }
        t.max(0.0)
    }

    /// Bounding box as (min, max) corners.
    pub fn bbox_2d(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in self.vertices_2d() {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Largest r with B_r(center) inside; negative if the center is outside.
    pub fn inradius_about(&self, center: [f64; 2]) -> f64 {
        -self.signed_distance_2d(center)
    }

    /// Smallest r with the polytope inside B_r(center).
    pub fn circumradius_about(&self, center: &[f64]) -> f64 {
        self.vertices.iter().map(|v| v.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// Points sampled along the boundary with spacing at most `step`.
    pub fn boundary_samples_2d(&self, step: f64) -> Vec<[f64; 2]> {
        let v = self.vertices_2d();
        let m = v.len();
        let mut out = Vec::new();
        for i in 0..m {
            let (a, b) = (v[i], v[(i + 1) % m]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let k = (len / step).ceil().max(1.0) as usize;
            for j in 0..k {
                let t = j as f64 / k as f64;
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        out
    }

    /// Hausdorff distance between the two boundary curves.
    pub fn hausdorff_2d(&self, other: &ConvexPolytope) -> f64 {
        let step = 1e-3 * self.diameter().max(other.diameter());
        let one = self.boundary_samples_2d(step).into_iter().map(|p| other.boundary_distance_2d(p)).fold(0.0, f64::max);
        let two = other.boundary_samples_2d(step).into_iter().map(|p| self.boundary_distance_2d(p)).fold(0.0, f64::max);
        one.max(two)
    }

    /// Image under an affine map.
    pub fn transform(&self, t: &AffineMap) -> Result<Self> {
        let pts: Vec<DVector<f64>> = self.vertices().iter().map(|v| t.apply(v)).collect();
        Self::new(&pts)
    }

    /// Plain-text form: one vertex per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let line: Vec<String> = v.iter().map(|x| format!("{x:.17e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pts = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let coords: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let coords = coords.map_err(|e| Error::Parse { pos: lineno + 1, msg: format!("bad coordinate: {e}") })?;
            pts.push(DVector::from_vec(coords));
        }
        Self::new(&pts)
    }
}

fn affine_rank(points: &[DVector<f64>]) -> usize {
    let n = points[0].len();
    let c = points.iter().fold(DVector::zeros(n), |acc, p| acc + p) / points.len() as f64;
    let mut m = nalgebra::DMatrix::zeros(n, points.len());
    for (j, p) in points.iter().enumerate() {
        m.set_column(j, &(p - &c));
    }
    let sv = m.singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-12 * top.max(1e-300)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [0.0, 0.0]];
        let poly = ConvexPolytope::from_points_2d(&pts).unwrap();
        assert_eq!(poly.len(), 4);
        assert!((poly.area_2d() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_input_is_degenerate() {
        let pts = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(ConvexPolytope::from_points_2d(&pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn exit_distance_in_unit_square() {
        let poly = ConvexPolytope::from_points_2d(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!((poly.exit_distance_2d([0.25, 0.5], [1.0, 0.0]) - 0.75).abs() < 1e-15);
        assert!((poly.exit_distance_2d([0.25, 0.5], [1.0, 1.0]) - 0.5).abs() < 1e-15);
        assert!((poly.inradius_about([0.5, 0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn text_round_trip_with_comments() {
        let text = "# square\n0 0\n1 0 # corner\n\n1 1\n0 1\n";
        let poly = ConvexPolytope::from_text(text).unwrap();
        let back = ConvexPolytope::from_text(&poly.to_text()).unwrap();
        assert_eq!(poly, back);
        assert!(matches!(ConvexPolytope::from_text("0 0\n1 x\n"), Err(Error::Parse { pos: 2, .. })));
    }

    #[test]
    fn cube_with_interior_points_in_3d() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(DVector::from_vec(vec![(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]));
        }
        pts.push(DVector::from_vec(vec![0.5, 0.5, 0.5]));
        pts.push(DVector::from_vec(vec![0.5, 0.5, 1.0]));
        let poly = ConvexPolytope::new(&pts).unwrap();
        assert_eq!(poly.len(), 8);
        assert!((poly.diameter() - 3f64.sqrt()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn hull_is_ccw_and_contains_inputs(pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40)) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            if let Ok(poly) = ConvexPolytope::from_points_2d(&pts) {
                let v = poly.vertices_2d();
                let m = v.len();
                for i in 0..m {
                    let (a, b, c) = (v[i], v[(i + 1) % m], v[(i + 2) % m]);
                    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                    prop_assert!(cross > 0.0);
                }
                for p in &pts {
                    prop_assert!(poly.contains_2d(*p, 1e-9));
                }
            }
        }
    }
}
