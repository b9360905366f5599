use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map T x = A (x − ξ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AffineRepr", into = "AffineRepr")]
pub struct AffineMap {
    a: DMatrix<f64>,
    anchor: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct AffineRepr {
    matrix: Vec<Vec<f64>>,
    anchor: Vec<f64>,
}

impl From<AffineMap> for AffineRepr {
    fn from(t: AffineMap) -> Self {
        let n = t.dim();
        AffineRepr { matrix: (0..n).map(|i| (0..n).map(|j| t.a[(i, j)]).collect()).collect(), anchor: t.anchor.iter().copied().collect() }
    }
}

impl TryFrom<AffineRepr> for AffineMap {
    type Error = Error;
    fn try_from(r: AffineRepr) -> Result<Self> {
        let n = r.anchor.len();
        if r.matrix.len() != n || r.matrix.iter().any(|row| row.len() != n) {
            return Err(Error::Domain("affine map matrix has wrong shape".into()));
        }
        let a = DMatrix::from_fn(n, n, |i, j| r.matrix[i][j]);
        AffineMap::new(a, DVector::from_vec(r.anchor))
    }
}

/// Scale-free statistics of an affine map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformStats {
    /// Volume ratio |det A|.
    pub det: f64,
    /// Operator norm of the unit-determinant rescaling.
    pub norm: f64,
    /// Operator norm of the inverse of the unit-determinant rescaling.
    pub norm_inv: f64,
    pub ecc: f64,
}

impl AffineMap {
    pub fn new(a: DMatrix<f64>, anchor: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || anchor.len() != n {
            return Err(Error::Domain("affine map needs a square matrix matching the anchor".into()));
        }
        if a.iter().chain(anchor.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite affine map entry".into()));
        }
        let sv = a.clone().singular_values();
        if sv.min() <= 1e-14 * sv.max() || sv.max() == 0.0 {
            return Err(Error::Degenerate("affine map is not invertible".into()));
        }
        Ok(Self { a, anchor })
    }

    pub fn identity(n: usize) -> Self {
        Self { a: DMatrix::identity(n, n), anchor: DVector::zeros(n) }
    }

    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, DVector::zeros(n))
    }

    pub fn from_2x2(m: [[f64; 2]; 2], anchor: [f64; 2]) -> Result<Self> {
        Self::new(DMatrix::from_fn(2, 2, |i, j| m[i][j]), DVector::from_column_slice(&anchor))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn matrix_2x2(&self) -> [[f64; 2]; 2] {
        [[self.a[(0, 0)], self.a[(0, 1)]], [self.a[(1, 0)], self.a[(1, 1)]]]
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * (x - &self.anchor)
    }

    pub fn apply2(&self, x: [f64; 2]) -> [f64; 2] {
        let (dx, dy) = (x[0] - self.anchor[0], x[1] - self.anchor[1]);
        [self.a[(0, 0)] * dx + self.a[(0, 1)] * dy, self.a[(1, 0)] * dx + self.a[(1, 1)] * dy]
    }

    pub fn inverse(&self) -> Self {
        let inv = self.a.clone().try_inverse().expect("invertibility checked on construction");
        let anchor = -(&self.a * &self.anchor);
        Self { a: inv, anchor }
    }

    /// The map x ↦ self(other(x)).
    pub fn compose(&self, other: &AffineMap) -> Self {
        let a = &self.a * &other.a;
        let other_inv = other.a.clone().try_inverse().expect("invertibility checked on construction");
        let anchor = &other.anchor + other_inv * &self.anchor;
        Self { a, anchor }
    }

    pub fn det(&self) -> f64 {
        self.a.determinant()
    }

    /// |det A|^{1/n}.
    pub fn det_root(&self) -> f64 {
        self.det().abs().powf(1.0 / self.dim() as f64)
    }

    pub fn norm(&self) -> f64 {
        self.a.clone().singular_values().max()
    }

    pub fn norm_inv(&self) -> f64 {
        1.0 / self.a.clone().singular_values().min()
    }

    /// The unit-determinant rescaling T̆ = det^{-1/n} T.
    pub fn rescaled(&self) -> Self {
        Self { a: &self.a / self.det_root(), anchor: self.anchor.clone() }
    }

    /// Replaces A by the symmetric positive definite polar factor (AᵀA)^{1/2}.
    pub fn spd_factor(&self) -> Self {
        let svd = self.a.clone().svd(false, true);
        let vt = svd.v_t.expect("requested");
        let p = vt.transpose() * DMatrix::from_diagonal(&svd.singular_values) * &vt;
        Self { a: (&p + p.transpose()) * 0.5, anchor: self.anchor.clone() }
    }

    pub fn stats(&self) -> TransformStats {
        let sv = self.a.clone().singular_values();
        let det = self.det().abs();
        let root = det.powf(1.0 / self.dim() as f64);
        let norm = sv.max() / root;
        let norm_inv = root / sv.min();
        TransformStats { det, norm, norm_inv, ecc: norm * norm_inv }
    }
}

/// Statistics of `t`; see [`AffineMap::stats`].
pub fn transform_stats(t: &AffineMap) -> TransformStats {
    t.stats()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_stats() {
        let s = AffineMap::identity(3).stats();
        assert_eq!((s.det, s.norm, s.norm_inv, s.ecc), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn diagonal_stats_by_hand() {
        let t = AffineMap::from_2x2([[2.0, 0.0], [0.0, 0.5]], [0.0, 0.0]).unwrap();
        let s = t.stats();
        assert!((s.det - 1.0).abs() < 1e-15);
        assert!((s.norm - 2.0).abs() < 1e-14);
        assert!((s.norm_inv - 2.0).abs() < 1e-14);
        assert!((s.ecc - 4.0).abs() < 1e-13);
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(AffineMap::from_2x2([[1.0, 2.0], [2.0, 4.0]], [0.0, 0.0]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let t = AffineMap::from_2x2([[1.0, 0.3], [-0.2, 2.0]], [0.5, -1.0]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: AffineMap = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn spd_factor_is_symmetric_with_same_singular_values() {
        let t = AffineMap::from_2x2([[0.0, -2.0], [1.0, 0.0]], [0.0, 0.0]).unwrap();
        let p = t.spd_factor();
        let m = p.matrix();
        assert!((m[(0, 1)] - m[(1, 0)]).abs() < 1e-14);
        assert!((m[(0, 0)] - 1.0).abs() < 1e-14 && (m[(1, 1)] - 2.0).abs() < 1e-14);
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize) -> AffineMap {
        loop {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
            let xi = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            if let Ok(t) = AffineMap::new(a, xi) {
                if t.stats().ecc < 1e6 {
                    return t;
                }
            }
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=5 {
            let t = random_map(&mut rng, n);
            let id = t.compose(&t.inverse());
            let id2 = t.inverse().compose(&t);
            for _ in 0..20 {
                let x = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
                assert!((id.apply(&x) - &x).amax() < 1e-10);
                assert!((id2.apply(&x) - &x).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (t1, t2) = (random_map(&mut rng, 3), random_map(&mut rng, 3));
        let c = t1.compose(&t2);
        let x = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        assert!((c.apply(&x) - t1.apply(&t2.apply(&x))).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn norm_chain_inequality(seed in 0u64..1000, n in 2usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_map(&mut rng, n);
            let s = t.stats();
            let p = (n - 1) as f64;
            prop_assert!(s.norm.powf(1.0 / p) <= s.norm_inv * (1.0 + 1e-10));
            prop_assert!(s.norm_inv <= s.norm.powf(p) * (1.0 + 1e-10));
            prop_assert!(s.ecc >= 1.0 - 1e-12);
        }
    }
}
