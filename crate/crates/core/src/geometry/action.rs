use super::affine::AffineMap;
use crate::error::{Error, Result};
use crate::field::{Grid, Interp, ScalarField};

/// Interpolation settings and error budget for [`group_action_with`].
#[derive(Clone, Copy, Debug)]
pub struct ActionBudget {
    pub interp: Interp,
    /// Allowed estimated resampling error relative to max(1, sup|𝓕_T v|).
    pub relative_error: f64,
}

impl Default for ActionBudget {
    fn default() -> Self {
        Self { interp: Interp::Biquadratic, relative_error: 1e-2 }
    }
}

/// (𝓕_T v)(y) = det^{2/n}T · v(T⁻¹y) on a grid covering the image of the valid region.
pub fn group_action(t: &AffineMap, v: &ScalarField) -> Result<ScalarField> {
    let g = v.grid();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (_, p, _) in v.valid_nodes() {
        let q = t.apply2(p);
        for k in 0..2 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    if !lo[0].is_finite() {
        return Err(Error::Domain("source field has no valid nodes".into()));
    }
    let target = Grid::covering(lo, hi, g.nx.max(g.ny))?;
    group_action_with(t, v, &target, ActionBudget::default())
}

/// Group action resampled onto `target`; nodes whose preimage leaves the source are invalid.
pub fn group_action_with(t: &AffineMap, v: &ScalarField, target: &Grid, budget: ActionBudget) -> Result<ScalarField> {
    if t.dim() != 2 {
        return Err(Error::Domain("group action on fields is planar".into()));
    }
    let scale = t.det().abs();
    let inv = t.inverse();
    let mut values = vec![f64::NAN; target.len()];
    let mut valid = vec![false; target.len()];
    let mut sup: f64 = 0.0;
    for (k, (val, ok)) in values.iter_mut().zip(valid.iter_mut()).enumerate() {
        let y = target.node_at(k);
        let x = if t.matrix().is_identity(0.0) && t.anchor().iter().all(|&a| a == 0.0) { y } else { inv.apply2(y) };
        if let Some(s) = v.interpolate(x, budget.interp) {
            *val = scale * s;
            *ok = true;
            sup = sup.max(val.abs());
        }
    }
    if !valid.iter().any(|&b| b) {
        return Err(Error::Resolution("target grid does not overlap the transformed source".into()));
    }
    // Re-interpolation error on the target ~ |D²(𝓕_T v)| h_t² / 8, with |D²(𝓕_T v)| ≤ scale ‖T⁻¹‖² |D²v|.
    let src = v.grid();
    let mut d2: f64 = 0.0;
    for j in 0..src.ny {
        for i in 0..src.nx {
            if let Some(h) = v.hessian_node(i, j, 1) {
                d2 = d2.max(h.symmetric_eigenvalues().amax());
            }
        }
    }
    let ninv = 1.0 / t.matrix().clone().singular_values().min();
    let estimate = scale * ninv * ninv * d2 * target.spacing * target.spacing / 8.0;
    if estimate > budget.relative_error * sup.max(1.0) {
        return Err(Error::Resolution(format!(
            "estimated resampling error {estimate:.3e} exceeds budget {:.3e}",
            budget.relative_error * sup.max(1.0)
        )));
    }
    ScalarField::new(*target, values, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    fn quad(p: [f64; 2]) -> f64 {
        0.5 * (1.7 * p[0] * p[0] - 0.4 * p[0] * p[1] + 0.9 * p[1] * p[1]) + 0.2 * p[0] - 0.1 * p[1] - 0.3
    }

    fn source() -> ScalarField {
        let g = Grid::covering([-2.0, -2.0], [2.0, 2.0], 81).unwrap();
        ScalarField::from_fn(g, quad, |p| p[0].hypot(p[1]) < 1.8).unwrap()
    }

    #[test]
    fn identity_action_is_exact_on_nodes() {
        let v = source();
        let w = group_action_with(&AffineMap::identity(2), &v, v.grid(), ActionBudget::default()).unwrap();
        assert_eq!(w, v);
    }

    #[test]
    fn composition_law_on_quadratic() {
        let v = source();
        let t1 = AffineMap::from_2x2([[1.1, 0.2], [-0.1, 0.8]], [0.1, 0.05]).unwrap();
        let t2 = AffineMap::from_2x2([[0.9, -0.15], [0.1, 1.2]], [-0.05, 0.1]).unwrap();
        let target = Grid::covering([-1.0, -1.0], [1.0, 1.0], 61).unwrap();
        let mid = Grid::covering([-2.2, -2.2], [2.2, 2.2], 111).unwrap();
        let b = ActionBudget { relative_error: f64::INFINITY, ..Default::default() };
        let two_step = group_action_with(&t1, &group_action_with(&t2, &v, &mid, b).unwrap(), &target, b).unwrap();
        let one_step = group_action_with(&t1.compose(&t2), &v, &target, b).unwrap();
        assert!(two_step.valid_count() > 1000);
        let mut worst: f64 = 0.0;
        for (k, _, a) in two_step.valid_nodes() {
            if one_step.valid_mask()[k] {
                worst = worst.max((a - one_step.values()[k]).abs());
            }
        }
        assert!(worst <= 1e-8, "discrepancy {worst}");
    }

    #[test]
    fn determinant_of_hessian_is_invariant() {
        let v = source();
        let t = AffineMap::from_2x2([[1.3, 0.4], [0.2, 0.7]], [0.1, 0.0]).unwrap();
        let target = Grid::covering([-1.5, -1.5], [1.5, 1.5], 91).unwrap();
        let w = group_action_with(&t, &v, &target, ActionBudget::default()).unwrap();
        let x = [0.2, -0.1];
        let hv = v.hessian_at(x, 2).unwrap();
        let hw = w.hessian_at(t.apply2(x), 2).unwrap();
        assert!((hv.determinant() - hw.determinant()).abs() < 1e-8, "{hv} {hw} {}", t.det());
        assert!((hv - Matrix2::new(1.7, -0.2, -0.2, 0.9)).amax() < 1e-9);
    }

    #[test]
    fn coarse_target_is_resolution_error() {
        let v = source();
        let t = AffineMap::from_2x2([[20.0, 0.0], [0.0, 20.0]], [0.0, 0.0]).unwrap();
        let target = Grid::covering([-30.0, -30.0], [30.0, 30.0], 3).unwrap();
        assert!(matches!(group_action_with(&t, &v, &target, ActionBudget::default()), Err(Error::Resolution(_))));
    }
}
