use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::affine::AffineMap;
use super::polytope::{convex_hull_2d, ConvexPolytope};
use crate::error::{Error, Result};

/// E = {x : (x − c)ᵀ M (x − c) ≤ 1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(Error::Domain("ellipsoid shape does not match center".into()));
        }
        let asym = (&shape - shape.transpose()).amax();
        if asym > 1e-12 * shape.amax().max(1.0) {
            return Err(Error::Domain("ellipsoid shape is not symmetric".into()));
        }
        let sym = (&shape + shape.transpose()) * 0.5;
        if sym.clone().symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::Degenerate("ellipsoid shape is not positive definite".into()));
        }
        Ok(Self { center, shape: sym })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Value of (x − c)ᵀ M (x − c).
    pub fn gauge(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        (d.transpose() * &self.shape * &d)[(0, 0)]
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.gauge(x) <= 1.0 + tol
    }

    /// Dilation by `s` about the center.
    pub fn dilate(&self, s: f64) -> Self {
        Self { center: self.center.clone(), shape: &self.shape / (s * s) }
    }

    /// Semi-axis lengths in increasing order.
    pub fn semi_axes(&self) -> Vec<f64> {
        let mut ax: Vec<f64> = self.shape.clone().symmetric_eigenvalues().iter().map(|l| 1.0 / l.sqrt()).collect();
        ax.sort_by(f64::total_cmp);
        ax
    }

    /// Support function h(u) = max_{x∈E} u·x.
    pub fn support(&self, u: &DVector<f64>) -> f64 {
        let minv = self.shape.clone().try_inverse().expect("positive definite");
        self.center.dot(u) + (u.transpose() * minv * u)[(0, 0)].sqrt()
    }

    /// Affine map sending E onto the unit ball, with symmetric positive definite matrix M^{1/2}.
    pub fn to_unit_ball(&self) -> AffineMap {
        let eig = self.shape.clone().symmetric_eigen();
        let sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
        let sqrt = (&sqrt + sqrt.transpose()) * 0.5;
        AffineMap::new(sqrt, self.center.clone()).expect("positive definite shape")
    }
}

/// Near-minimal enclosing ellipsoid by Khachiyan's barycentric ascent with away steps.
///
/// Stops when max_i q̃ᵢᵀX⁻¹q̃ᵢ ≤ (1 + tol)(n + 1); the result is then rescaled to contain every point.
pub fn min_enclosing_ellipsoid(points: &[DVector<f64>], tol: f64) -> Result<Ellipsoid> {
    let Some(first) = points.first() else {
        return Err(Error::Degenerate("no points".into()));
    };
    let n = first.len();
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::Domain("points have mixed dimensions".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let pts: Vec<DVector<f64>> = if n == 2 && points.len() > 8 {
        let flat: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
        convex_hull_2d(&flat).into_iter().map(|p| DVector::from_column_slice(&p)).collect()
    } else {
        points.to_vec()
    };
    let m = pts.len();
    if m < n + 1 {
        return Err(Error::Degenerate(format!("need at least {} points, got {m}", n + 1)));
    }
    let mean = pts.iter().fold(DVector::zeros(n), |a, p| a + p) / m as f64;
    let mut centered = DMatrix::zeros(n, m);
    for (j, p) in pts.iter().enumerate() {
        centered.set_column(j, &(p - &mean));
    }
    let sv = centered.singular_values();
    if sv.min() <= 1e-7 * sv.max() {
        return Err(Error::Degenerate(format!(
            "points are affinely dependent (singular value ratio {:.3e})",
            sv.min() / sv.max().max(1e-300)
        )));
    }
    let d = (n + 1) as f64;
    let lifted: Vec<DVector<f64>> = pts.iter().map(|p| p.clone().insert_row(n, 1.0)).collect();
    let mut u = vec![1.0 / m as f64; m];
    let mut omega = vec![0.0; m];
    let max_iter = 200_000;
    for _ in 0..max_iter {
        let mut x = DMatrix::zeros(n + 1, n + 1);
        for (q, &w) in lifted.iter().zip(&u) {
            if w > 0.0 {
                x.ger(w, q, q, 1.0);
            }
        }
        let Some(xinv) = x.try_inverse() else {
            return Err(Error::Degenerate("moment matrix became singular".into()));
        };
        for (o, q) in omega.iter_mut().zip(&lifted) {
            *o = (q.transpose() * &xinv * q)[(0, 0)];
        }
        let (j, &wmax) = omega.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
        let (k, &wmin) =
            omega.iter().enumerate().filter(|(i, _)| u[*i] > 0.0).min_by(|a, b| a.1.total_cmp(b.1)).expect("some weight is positive");
        let eps_plus = wmax / d - 1.0;
        let eps_minus = 1.0 - wmin / d;
        if eps_plus <= tol {
            break;
        }
        if eps_plus >= eps_minus {
            let lam = (wmax - d) / (d * (wmax - 1.0));
            for w in u.iter_mut() {
                *w *= 1.0 - lam;
            }
            u[j] += lam;
        } else {
            let uk = u[k];
            let lam = ((d - wmin) / (d * (wmin - 1.0))).min(uk / (1.0 - uk));
            for w in u.iter_mut() {
                *w *= 1.0 + lam;
            }
            u[k] -= lam;
            if u[k] < 1e-300 {
                u[k] = 0.0;
            }
        }
    }
    let c = pts.iter().zip(&u).fold(DVector::zeros(n), |a, (p, &w)| a + p * w);
    let mut s = DMatrix::zeros(n, n);
    for (p, &w) in pts.iter().zip(&u) {
        let dp = p - &c;
        s.ger(w, &dp, &dp, 1.0);
    }
    let sinv = s.try_inverse().ok_or_else(|| Error::Degenerate("scatter matrix is singular".into()))?;
    let mut shape = sinv / n as f64;
    shape = (&shape + shape.transpose()) * 0.5;
    let gmax = pts
        .iter()
        .map(|p| {
            let dp = p - &c;
            (dp.transpose() * &shape * &dp)[(0, 0)]
        })
        .fold(0.0, f64::max);
    if gmax > 1.0 {
        shape /= gmax;
    }
    Ellipsoid::new(c, shape)
}

/// Affine map with symmetric positive definite matrix sending `poly` between B₁ and B_n.
///
/// In the plane the scale puts the inscribed radius about the image center at exactly 1.
pub fn normalize_domain(poly: &ConvexPolytope) -> Result<(AffineMap, ConvexPolytope)> {
    let n = poly.dim();
    let e = min_enclosing_ellipsoid(&poly.vertices(), 1e-7)?;
    let base = e.to_unit_ball();
    let scale = if n == 2 {
        let image = poly.transform(&base)?;
        let r = image.inradius_about([0.0, 0.0]);
        if !(r > 0.0) {
            return Err(Error::Degenerate("ellipsoid center outside the polygon".into()));
        }
        1.0 / r
    } else {
        n as f64
    };
    let t = AffineMap::new(base.matrix() * scale, base.anchor().clone())?;
    let image = poly.transform(&t)?;
    Ok((t, image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    /// Checks n⁻¹E ⊆ hull through the support function on every facet of the planar hull.
    fn shrunk_inside_hull(e: &Ellipsoid, hull: &ConvexPolytope, tol: f64) -> bool {
        let v = hull.vertices_2d();
        let k = v.len();
        (0..k).all(|i| {
            let (a, b) = (v[i], v[(i + 1) % k]);
            let nrm = v2(b[1] - a[1], a[0] - b[0]).normalize();
            let off = nrm[0] * a[0] + nrm[1] * a[1];
            e.dilate(0.5).support(&nrm) <= off + tol
        })
    }

    #[test]
    fn square_gives_circumcircle() {
        let pts = vec![v2(1.0, 1.0), v2(-1.0, 1.0), v2(-1.0, -1.0), v2(1.0, -1.0)];
        let e = min_enclosing_ellipsoid(&pts, 1e-7).unwrap();
        assert!(e.center.amax() < 1e-6);
        for a in e.semi_axes() {
            assert!((a - 2f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn circle_samples_give_unit_circle() {
        let pts: Vec<_> = (0..64)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                v2(t.cos(), t.sin())
            })
            .collect();
        let e = min_enclosing_ellipsoid(&pts, 1e-7).unwrap();
        assert!(e.center.amax() < 1e-6);
        for a in e.semi_axes() {
            assert!((a - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn random_clouds_satisfy_john_inclusions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = rng.random_range(3..40);
            let pts: Vec<_> = (0..m).map(|_| v2(rng.random_range(-2.0..3.0), rng.random_range(-1.0..1.0))).collect();
            let Ok(hull) = ConvexPolytope::new(&pts) else { continue };
            let e = min_enclosing_ellipsoid(&pts, 1e-7).unwrap();
            assert!(pts.iter().all(|p| e.contains(p, 1e-9)));
            assert!(shrunk_inside_hull(&e, &hull, 1e-6));
        }
    }

    #[test]
    fn three_dimensional_cube() {
        let pts: Vec<_> = (0..8)
            .map(|i| {
                DVector::from_vec(vec![(i & 1) as f64 * 2.0 - 1.0, ((i >> 1) & 1) as f64 * 2.0 - 1.0, ((i >> 2) & 1) as f64 * 2.0 - 1.0])
            })
            .collect();
        let e = min_enclosing_ellipsoid(&pts, 1e-7).unwrap();
        for a in e.semi_axes() {
            assert!((a - 3f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn sliver_is_degenerate() {
        let pts = vec![v2(0.0, 0.0), v2(1.0, 0.0), v2(1.0, 1e-8), v2(0.0, 1e-8)];
        assert!(matches!(min_enclosing_ellipsoid(&pts, 1e-7), Err(Error::Degenerate(_))));
        let poly = ConvexPolytope::from_points_2d(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1e-8], [0.0, 1e-8]]).unwrap();
        assert!(matches!(normalize_domain(&poly), Err(Error::Degenerate(_))));
    }

    #[test]
    fn unit_disk_normalizes_to_near_identity() {
        let poly = ConvexPolytope::regular(256, [0.0, 0.0], 1.0, 0.0).unwrap();
        let (t, _) = normalize_domain(&poly).unwrap();
        let a = t.matrix();
        assert!((a - DMatrix::identity(2, 2)).amax() < 1e-3);
        assert!(t.anchor().amax() < 1e-6);
    }

    #[test]
    fn ellipse_normalizes_between_unit_and_double_balls() {
        let poly = ConvexPolytope::ellipse([0.3, -0.2], 4.0, 1.0, 0.4, 400).unwrap();
        let (t, image) = normalize_domain(&poly).unwrap();
        assert!(image.inradius_about([0.0, 0.0]) >= 1.0 - 1e-9);
        // dense boundary sampling of the true ellipse, pushed forward
        let (s, c) = 0.4f64.sin_cos();
        for k in 0..4000 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 4000.0;
            let (x, y) = (4.0 * th.cos(), th.sin());
            let p = t.apply2([0.3 + c * x - s * y, -0.2 + s * x + c * y]);
            assert!(p[0].hypot(p[1]) <= 2.0 + 1e-6);
        }
        let m = t.matrix();
        assert!((m[(0, 1)] - m[(1, 0)]).abs() < 1e-12);
    }
}
