//! Compressed sparse rows, ILU(0) and BiCGSTAB for the Newton systems.

#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from per-row (column, value) lists; duplicates are summed and columns sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *vals.last_mut().expect("nonempty") += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }
}

/// Incomplete LU factorization with the sparsity of the matrix.
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Option<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return None;
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for k in start..end {
                let j = lu.cols[k];
                if j >= i {
                    break;
                }
                let piv = lu.vals[diag[j]];
                if piv == 0.0 {
                    return None;
                }
                let lij = lu.vals[k] / piv;
                lu.vals[k] = lij;
                for kk in diag[j] + 1..lu.row_ptr[j + 1] {
                    let p = pos[lu.cols[kk]];
                    if p != usize::MAX {
                        lu.vals[p] -= lij * lu.vals[kk];
                    }
                }
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
            if lu.vals[diag[i]] == 0.0 || !lu.vals[diag[i]].is_finite() {
                return None;
            }
        }
        Some(Self { lu, diag })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = b[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[k] * x[lu.cols[k]];
            }
            x[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = x[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * x[lu.cols[k]];
            }
            x[i] = s / lu.vals[self.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB; returns (iterations, relative residual).
pub fn bicgstab(a: &Csr, pre: &Ilu0, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> (usize, f64) {
    let n = a.n;
    let bn = norm(b).max(1e-300);
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ph = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut sh = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = norm(&r) / bn;
    if res <= tol {
        return (0, res);
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return (it, res);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.solve(&p, &mut ph);
        a.mul(&ph, &mut v);
        let den = dot(&r0, &v);
        if den == 0.0 {
            return (it, res);
        }
        alpha = rho / den;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bn <= tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return (it, norm(&s) / bn);
        }
        pre.solve(&s, &mut sh);
        a.mul(&sh, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bn;
        if res <= tol {
            return (it, res);
        }
    }
    (max_iter, res)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D Dirichlet Laplacian with a convection term; checked against the dense product.
    #[test]
    fn solves_nonsymmetric_m_matrix() {
        let n = 200;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.5)];
                if i > 0 {
                    r.push((i - 1, -1.3));
                }
                if i + 1 < n {
                    r.push((i + 1, -0.7));
                }
                r
            })
            .collect();
        let a = Csr::from_rows(rows);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut b = vec![0.0; n];
        a.mul(&xs, &mut b);
        let pre = Ilu0::new(&a).unwrap();
        let mut x = vec![0.0; n];
        let (_, res) = bicgstab(&a, &pre, &b, &mut x, 1e-12, 500);
        assert!(res <= 1e-12);
        let err = x.iter().zip(&xs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn ilu_of_tridiagonal_is_exact() {
        let rows = vec![vec![(0, 4.0), (1, -1.0)], vec![(0, -1.0), (1, 4.0), (2, -1.0)], vec![(1, -1.0), (2, 4.0)]];
        let a = Csr::from_rows(rows);
        let pre = Ilu0::new(&a).unwrap();
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        pre.solve(&b, &mut x);
        let mut ax = [0.0; 3];
        a.mul(&x, &mut ax);
        for k in 0..3 {
            assert!((ax[k] - b[k]).abs() < 1e-14);
        }
    }
}
