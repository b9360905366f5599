use nalgebra::Matrix2;

use super::grid::Grid;
use crate::error::{Error, Result};

/// Cell corner indices with their bilinear weights.
type Corners = ([(usize, usize); 4], [f64; 4]);

/// Interpolation rule for off-grid values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Interp {
    Bilinear,
    /// 3×3 tensor Lagrange; exact on quadratics.
    #[default]
    Biquadratic,
}

/// Grid function with a validity mask.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.valid == other.valid
            && self.values.iter().zip(&other.values).zip(&self.valid).all(|((a, b), &ok)| !ok || a == b)
    }
}

fn lagrange3(t: f64) -> [f64; 3] {
    // nodes at -1, 0, 1
    [0.5 * t * (t - 1.0), (1.0 - t) * (1.0 + t), 0.5 * t * (t + 1.0)]
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || valid.len() != grid.len() {
            return Err(Error::Domain("field storage does not match grid".into()));
        }
        if values.iter().zip(&valid).any(|(v, &ok)| ok && !v.is_finite()) {
            return Err(Error::Domain("non-finite value at a valid node".into()));
        }
        Ok(Self { grid, values, valid })
    }

    /// Samples `f` at every node where `mask` holds.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64, mask: impl Fn([f64; 2]) -> bool) -> Result<Self> {
        let mut values = vec![f64::NAN; grid.len()];
        let mut valid = vec![false; grid.len()];
        for idx in 0..grid.len() {
            let p = grid.node_at(idx);
            if mask(p) {
                values[idx] = f(p);
                valid[idx] = true;
            }
        }
        Self::new(grid, values, valid)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.grid.index(i, j);
        self.valid[k].then(|| self.values[k])
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[self.grid.index(i, j)]
    }

    fn checked(&self, i: isize, j: isize) -> Option<f64> {
        if i < 0 || j < 0 || i as usize >= self.grid.nx || j as usize >= self.grid.ny {
            return None;
        }
        self.at(i as usize, j as usize)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Valid nodes as (index, position, value).
    pub fn valid_nodes(&self) -> impl Iterator<Item = (usize, [f64; 2], f64)> + '_ {
        (0..self.grid.len()).filter(|&k| self.valid[k]).map(|k| (k, self.grid.node_at(k), self.values[k]))
    }

    /// Minimum over valid nodes with its position.
    pub fn min(&self) -> Option<(f64, [f64; 2])> {
        self.valid_nodes().map(|(_, p, v)| (v, p)).min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn max(&self) -> Option<(f64, [f64; 2])> {
        self.valid_nodes().map(|(_, p, v)| (v, p)).max_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Pointwise map on valid nodes.
    pub fn map(&self, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let mut out = self.clone();
        for k in 0..self.grid.len() {
            if self.valid[k] {
                out.values[k] = f(self.grid.node_at(k), self.values[k]);
            }
        }
        out
    }

    /// Largest |self − other| over nodes valid in both (same grid required).
    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Domain("fields live on different grids".into()));
        }
        Ok((0..self.grid.len())
            .filter(|&k| self.valid[k] && other.valid[k])
            .map(|k| (self.values[k] - other.values[k]).abs())
            .fold(0.0, f64::max))
    }

    /// Value at an arbitrary point; `None` if the stencil touches invalid nodes.
    pub fn interpolate(&self, p: [f64; 2], rule: Interp) -> Option<f64> {
        let f = self.grid.frac(p);
        let snap = |x: f64| if (x - x.round()).abs() < 1e-11 { x.round() } else { x };
        let f = [snap(f[0]), snap(f[1])];
        if f[0] == f[0].round() && f[1] == f[1].round() {
            return self.checked(f[0] as isize, f[1] as isize);
        }
        if rule == Interp::Biquadratic {
            if let Some(v) = self.biquadratic(f) {
                return Some(v);
            }
        }
        self.bilinear(f)
    }

    fn bilinear(&self, f: [f64; 2]) -> Option<f64> {
        let (i, j) = (f[0].floor() as isize, f[1].floor() as isize);
        let (tx, ty) = (f[0] - i as f64, f[1] - j as f64);
        let v00 = self.checked(i, j)?;
        let v10 = self.checked(i + 1, j)?;
        let v01 = self.checked(i, j + 1)?;
        let v11 = self.checked(i + 1, j + 1)?;
        Some((1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * v10 + (1.0 - tx) * ty * v01 + tx * ty * v11)
    }

    fn biquadratic(&self, f: [f64; 2]) -> Option<f64> {
        let (ci, cj) = (f[0].round() as isize, f[1].round() as isize);
        let (fi, fj) = (f[0].floor() as isize, f[1].floor() as isize);
        // centers whose 3×3 block contains the cell, nearest first
        let xs = [ci, if ci == fi { fi + 1 } else { fi }];
        let ys = [cj, if cj == fj { fj + 1 } else { fj }];
        for &mi in &xs {
            for &mj in &ys {
                if let Some(v) = self.block(mi, mj, f) {
                    return Some(v);
                }
            }
        }
        None
    }

    fn block(&self, mi: isize, mj: isize, f: [f64; 2]) -> Option<f64> {
        let wx = lagrange3(f[0] - mi as f64);
        let wy = lagrange3(f[1] - mj as f64);
        let mut s = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            for (a, wxa) in wx.iter().enumerate() {
                s += wxa * wyb * self.checked(mi + a as isize - 1, mj + b as isize - 1)?;
            }
        }
        Some(s)
    }

    /// Centered gradient at a node with step `s` cells.
    pub fn gradient_node(&self, i: usize, j: usize, s: usize) -> Option<[f64; 2]> {
        let (i, j, s) = (i as isize, j as isize, s as isize);
        let d = 2.0 * s as f64 * self.grid.spacing;
        self.checked(i, j)?;
        Some([(self.checked(i + s, j)? - self.checked(i - s, j)?) / d, (self.checked(i, j + s)? - self.checked(i, j - s)?) / d])
    }

    /// Centered Hessian at a node with step `s` cells; exact on quadratics.
    pub fn hessian_node(&self, i: usize, j: usize, s: usize) -> Option<Matrix2<f64>> {
        let (i, j, s) = (i as isize, j as isize, s as isize);
        let sh = s as f64 * self.grid.spacing;
        let c = self.checked(i, j)?;
        let uxx = (self.checked(i + s, j)? - 2.0 * c + self.checked(i - s, j)?) / (sh * sh);
        let uyy = (self.checked(i, j + s)? - 2.0 * c + self.checked(i, j - s)?) / (sh * sh);
        let uxy = (self.checked(i + s, j + s)? - self.checked(i + s, j - s)? - self.checked(i - s, j + s)? + self.checked(i - s, j - s)?)
            / (4.0 * sh * sh);
        Some(Matrix2::new(uxx, uxy, uxy, uyy))
    }

    fn corners(&self, p: [f64; 2]) -> Option<Corners> {
        let f = self.grid.frac(p);
        let snap = |x: f64| if (x - x.round()).abs() < 1e-11 { x.round() } else { x };
        let f = [snap(f[0]), snap(f[1])];
        let (i, j) = (f[0].floor(), f[1].floor());
        if i < 0.0 || j < 0.0 {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        let (tx, ty) = (f[0] - i as f64, f[1] - j as f64);
        let ip = if tx == 0.0 { i } else { i + 1 };
        let jp = if ty == 0.0 { j } else { j + 1 };
        if ip >= self.grid.nx || jp >= self.grid.ny {
            return None;
        }
        Some(([(i, j), (ip, j), (i, jp), (ip, jp)], [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty]))
    }

    /// Hessian at an arbitrary point: nodal centered differences blended bilinearly.
    pub fn hessian_at(&self, p: [f64; 2], step: usize) -> Result<Matrix2<f64>> {
        let prox = || Error::Proximity(format!("Hessian stencil at ({:.4}, {:.4}) leaves the valid region", p[0], p[1]));
        let (nodes, w) = self.corners(p).ok_or_else(prox)?;
        let mut h = Matrix2::zeros();
        for ((i, j), wk) in nodes.iter().zip(w) {
            if wk != 0.0 {
                h += self.hessian_node(*i, *j, step).ok_or_else(prox)? * wk;
            }
        }
        Ok((h + h.transpose()) * 0.5)
    }

    /// Gradient at an arbitrary point, companion of [`ScalarField::hessian_at`].
    pub fn gradient_at(&self, p: [f64; 2], step: usize) -> Result<[f64; 2]> {
        let prox = || Error::Proximity(format!("gradient stencil at ({:.4}, {:.4}) leaves the valid region", p[0], p[1]));
        let (nodes, w) = self.corners(p).ok_or_else(prox)?;
        let mut g = [0.0; 2];
        for ((i, j), wk) in nodes.iter().zip(w) {
            if wk != 0.0 {
                let gn = self.gradient_node(*i, *j, step).ok_or_else(prox)?;
                g[0] += wk * gn[0];
                g[1] += wk * gn[1];
            }
        }
        Ok(g)
    }

    /// Restricts the mask further.
    pub fn masked(&self, keep: impl Fn([f64; 2]) -> bool) -> Self {
        let mut out = self.clone();
        for k in 0..self.grid.len() {
            if out.valid[k] && !keep(self.grid.node_at(k)) {
                out.valid[k] = false;
                out.values[k] = f64::NAN;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quad(p: [f64; 2]) -> f64 {
        0.5 * (2.0 * p[0] * p[0] + 0.6 * p[0] * p[1] + 0.5 * p[1] * p[1]) - 0.3 * p[0] + 0.1
    }

    fn grid() -> Grid {
        Grid::new([-1.0, -1.0], 0.05, 41, 41).unwrap()
    }

    #[test]
    fn hessian_exact_on_quadratic() {
        let f = ScalarField::from_fn(grid(), quad, |_| true).unwrap();
        let h = f.hessian_at([0.123, -0.271], 2).unwrap();
        assert!((h - Matrix2::new(2.0, 0.3, 0.3, 0.5)).amax() < 1e-10);
        let g = f.gradient_at([0.123, -0.271], 2).unwrap();
        assert!((g[0] - (2.0 * 0.123 + 0.3 * -0.271 - 0.3)).abs() < 1e-11);
        assert!((g[1] - (0.3 * 0.123 + 0.5 * -0.271)).abs() < 1e-11);
    }

    #[test]
    fn paraboloid_hessian_is_identity() {
        let f = ScalarField::from_fn(grid(), |p| 0.5 * (p[0] * p[0] + p[1] * p[1] - 1.0), |p| p[0].hypot(p[1]) < 1.0).unwrap();
        for p in [[0.0, 0.0], [0.31, -0.2], [-0.5, 0.5]] {
            assert!((f.hessian_at(p, 2).unwrap() - Matrix2::identity()).amax() < 1e-10);
        }
    }

    #[test]
    fn stencil_outside_mask_is_proximity_error() {
        let f = ScalarField::from_fn(grid(), quad, |p| p[0].hypot(p[1]) < 0.5).unwrap();
        assert!(matches!(f.hessian_at([0.47, 0.0], 2), Err(Error::Proximity(_))));
    }

    #[test]
    fn hessian_converges_at_second_order() {
        let exact = |p: [f64; 2]| {
            let e = (0.5 * (p[0] * p[0] + p[1] * p[1])).exp();
            Matrix2::new(e * (1.0 + p[0] * p[0]), e * p[0] * p[1], e * p[0] * p[1], e * (1.0 + p[1] * p[1]))
        };
        let x = [0.3, 0.1];
        let mut errs = Vec::new();
        for n in [41, 81, 161] {
            let g = Grid::covering([-1.0, -1.0], [1.0, 1.0], n).unwrap();
            let f = ScalarField::from_fn(g, |p| (0.5 * (p[0] * p[0] + p[1] * p[1])).exp(), |_| true).unwrap();
            errs.push((f.hessian_at(x, 2).unwrap() - exact(x)).amax());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.8, "order {order}, errors {errs:?}");
        }
    }

    #[test]
    fn biquadratic_exact_on_quadratic_near_mask_edge() {
        let f = ScalarField::from_fn(grid(), quad, |p| p[0].hypot(p[1]) < 0.7).unwrap();
        for p in [[0.0, 0.0], [0.6, 0.2], [-0.41, 0.52], [0.013, -0.66]] {
            if let Some(v) = f.interpolate(p, Interp::Biquadratic) {
                assert!((v - quad(p)).abs() < 1e-12, "{p:?}");
            }
        }
        assert!(f.interpolate([0.9, 0.0], Interp::Biquadratic).is_none());
    }

    proptest! {
        #[test]
        fn bilinear_stays_within_corner_range(x in -0.99f64..0.99, y in -0.99f64..0.99) {
            let f = ScalarField::from_fn(grid(), |p| (3.0 * p[0]).sin() * p[1].exp(), |_| true).unwrap();
            let v = f.interpolate([x, y], Interp::Bilinear).unwrap();
            let g = f.grid().frac([x, y]);
            let (i, j) = (g[0].floor() as usize, g[1].floor() as usize);
            let c = [f.at(i, j).unwrap(), f.at(i + 1, j).unwrap(), f.at(i, j + 1).unwrap(), f.at(i + 1, j + 1).unwrap()];
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
