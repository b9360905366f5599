use nalgebra::DVector;

/// Tests whether `p` is a convex combination of `points` (phase-one simplex with Bland's rule).
pub fn in_convex_hull(points: &[DVector<f64>], p: &DVector<f64>, tol: f64) -> bool {
    let m = points.len();
    if m == 0 {
        return false;
    }
    let n = p.len();
    let rows = n + 1;
    // Columns: m lambdas, `rows` artificials, then rhs.
    let cols = m + rows + 1;
    let mut t = vec![0.0; (rows + 1) * cols];
    let idx = |r: usize, c: usize| r * cols + c;
    for r in 0..rows {
        let rhs = if r < n { p[r] } else { 1.0 };
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            let a = if r < n { points[j][r] } else { 1.0 };
            t[idx(r, j)] = sign * a;
        }
        t[idx(r, m + r)] = 1.0;
        t[idx(r, cols - 1)] = sign * rhs;
    }
    // Objective row: minimize the sum of artificials, written as reduced costs.
    for c in 0..cols {
        let mut s = 0.0;
        for r in 0..rows {
            if c < m || c == cols - 1 {
                s += t[idx(r, c)];
            }
        }
        t[idx(rows, c)] = s;
    }
    let mut basis: Vec<usize> = (0..rows).map(|r| m + r).collect();
    let scale = 1.0 + p.amax() + points.iter().map(|q| q.amax()).fold(0.0, f64::max);
    let eps = 1e-12 * scale;
    for _ in 0..(50 * (m + rows)) {
        let Some(enter) = (0..m + rows).find(|&c| t[idx(rows, c)] > eps) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for r in 0..rows {
            let a = t[idx(r, enter)];
            if a > eps {
                let ratio = t[idx(r, cols - 1)] / a;
                let better = ratio < best - 1e-15 || (ratio <= best + 1e-15 && leave.is_some_and(|l| basis[r] < basis[l]));
                if better {
                    best = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(lr) = leave else { break };
        let piv = t[idx(lr, enter)];
        for c in 0..cols {
            t[idx(lr, c)] /= piv;
        }
        for r in 0..=rows {
            if r != lr {
                let factor = t[idx(r, enter)];
                if factor != 0.0 {
                    for c in 0..cols {
                        t[idx(r, c)] -= factor * t[idx(lr, c)];
                    }
                }
            }
        }
        basis[lr] = enter;
    }
    t[idx(rows, cols - 1)] <= tol * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn square_membership() {
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[1.0, 1.0]), v(&[0.0, 1.0])];
        assert!(in_convex_hull(&pts, &v(&[0.5, 0.5]), 1e-10));
        assert!(in_convex_hull(&pts, &v(&[1.0, 0.3]), 1e-10));
        assert!(!in_convex_hull(&pts, &v(&[1.1, 0.5]), 1e-10));
        assert!(!in_convex_hull(&pts, &v(&[-0.2, -0.2]), 1e-10));
    }

    #[test]
    fn cube_center_in_3d() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(v(&[(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]));
        }
        assert!(in_convex_hull(&pts, &v(&[0.5, 0.5, 0.5]), 1e-10));
        assert!(!in_convex_hull(&pts, &v(&[0.5, 0.5, 1.5]), 1e-10));
    }
}
