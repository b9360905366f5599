use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::domain::Domain;
use super::sparse::{bicgstab, Csr, Ilu0};
use super::stencil::{directions, orthogonal_pairs, superbase_form, superbases, Scheme};
use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};

/// Numerical settings for the Monge–Ampère solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Nodes along the longer side of the domain's bounding box.
    pub grid: usize,
    /// Number of direction pairs in the stencil.
    pub pairs: usize,
    pub scheme: Scheme,
    /// Residual tolerance in the max norm, relative to max(1, sup fⁿ).
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest damping factor tried by the line search.
    pub min_damping: f64,
    /// Nonlinear Gauss–Seidel sweeps per fallback.
    pub gs_sweeps: usize,
    pub linear_tol: f64,
    /// Nodes closer than this multiple of the spacing to the boundary take the boundary value.
    pub boundary_snap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid: 129,
            pairs: 8,
            scheme: Scheme::Superbase,
            tol: 1e-8,
            max_iter: 200,
            min_damping: 1.0 / 1024.0,
            gs_sweeps: 10,
            linear_tol: 1e-12,
            boundary_snap: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Domain("solver tolerance must be positive".into()));
        }
        if self.pairs < 2 {
            return Err(Error::Domain("at least two direction pairs are needed".into()));
        }
        if self.grid < 5 {
            return Err(Error::Domain("grid resolution must be at least 5".into()));
        }
        Ok(())
    }
}

/// Outcome of a solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub min_value: f64,
    pub argmin: [f64; 2],
    pub convexity_violations: usize,
    pub gs_sweeps: usize,
    pub unknowns: usize,
    pub spacing: f64,
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Arm {
    target: u32,
    coef: f64,
    bval: f64,
}

struct Disc {
    grid: Grid,
    unknown_nodes: Vec<usize>,
    fixed: Vec<(usize, f64)>,
    k: usize,
    arms: Vec<Arm>,
    c0: Vec<f64>,
    norms: Vec<f64>,
    rhs: Vec<f64>,
    fvals: Vec<f64>,
    scheme: Scheme,
    triples: Vec<[usize; 3]>,
    pairs: Vec<[usize; 2]>,
}

type Fun<'a> = &'a (dyn Fn([f64; 2]) -> f64 + Sync);

impl Disc {
    fn build(domain: &Domain, grid: &Grid, f: Fun, g: Fun, cfg: &SolverConfig) -> Result<Self> {
        let h = grid.spacing;
        let dirs = directions(cfg.pairs);
        let k = dirs.len();
        let mut node_unknown = vec![NONE; grid.len()];
        let mut unknown_nodes = Vec::new();
        let mut fixed = Vec::new();
        for idx in 0..grid.len() {
            let p = grid.node_at(idx);
            let lvl = domain.level(p);
            if lvl < -cfg.boundary_snap * h {
                node_unknown[idx] = unknown_nodes.len() as u32;
                unknown_nodes.push(idx);
            } else if lvl <= 0.0 {
                fixed.push((idx, g(p)));
            }
        }
        if unknown_nodes.is_empty() {
            return Err(Error::Domain("grid has no interior nodes in the domain".into()));
        }
        let fixed_val: std::collections::HashMap<usize, f64> = fixed.iter().copied().collect();
        let per_node: Vec<(Vec<Arm>, Vec<f64>)> = unknown_nodes
            .par_iter()
            .map(|&idx| {
                let (i, j) = grid.coords(idx);
                let p = grid.node(i, j);
                let mut arms = Vec::with_capacity(2 * k);
                let mut c0 = Vec::with_capacity(k);
                for e in &dirs {
                    let mut t = [0.0; 2];
                    let mut side = [Arm { target: NONE, coef: 0.0, bval: 0.0 }; 2];
                    for (s, sign) in [1i32, -1].into_iter().enumerate() {
                        let d = [sign as f64 * e[0] as f64 * h, sign as f64 * e[1] as f64 * h];
                        let te = domain.exit_distance(p, d);
                        let (ni, nj) = (i as i64 + (sign * e[0]) as i64, j as i64 + (sign * e[1]) as i64);
                        let in_grid = ni >= 0 && nj >= 0 && (ni as usize) < grid.nx && (nj as usize) < grid.ny;
                        if te > 1.0 + 1e-9 && in_grid {
                            let nidx = grid.index(ni as usize, nj as usize);
                            t[s] = 1.0;
                            if node_unknown[nidx] != NONE {
                                side[s].target = node_unknown[nidx];
                            } else {
                                side[s].bval = fixed_val.get(&nidx).copied().unwrap_or_else(|| g(grid.node_at(nidx)));
                            }
                        } else {
                            let tt = te.clamp(1e-12, 1.0);
                            t[s] = tt;
                            side[s].bval = g([p[0] + tt * d[0], p[1] + tt * d[1]]);
                        }
                    }
                    let (tp, tm) = (t[0], t[1]);
                    let cp = 2.0 / (tp * (tp + tm) * h * h);
                    let cm = 2.0 / (tm * (tp + tm) * h * h);
                    side[0].coef = cp;
                    side[1].coef = cm;
                    arms.extend_from_slice(&side);
                    c0.push(-(cp + cm));
                }
                (arms, c0)
            })
            .collect();
        let mut arms = Vec::with_capacity(unknown_nodes.len() * 2 * k);
        let mut c0 = Vec::with_capacity(unknown_nodes.len() * k);
        for (a, c) in per_node {
            arms.extend(a);
            c0.extend(c);
        }
        let fvals: Vec<f64> = unknown_nodes.iter().map(|&idx| f(grid.node_at(idx))).collect();
        if let Some(bad) = fvals.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            let p = grid.node_at(unknown_nodes[bad]);
            return Err(Error::Domain(format!("right-hand side must be positive, got {} at ({:.4}, {:.4})", fvals[bad], p[0], p[1])));
        }
        let rhs = fvals.iter().map(|v| v * v).collect();
        let norms = dirs.iter().map(|e| (e[0] * e[0] + e[1] * e[1]) as f64).collect();
        Ok(Self {
            grid: *grid,
            unknown_nodes,
            fixed,
            k,
            arms,
            c0,
            norms,
            rhs,
            fvals,
            scheme: cfg.scheme,
            triples: superbases(&dirs),
            pairs: orthogonal_pairs(&dirs),
        })
    }

    fn rhs_scale(&self) -> f64 {
        self.rhs.iter().copied().fold(1.0, f64::max)
    }

    fn n(&self) -> usize {
        self.unknown_nodes.len()
    }

    /// Second differences at unknown `i`, split into neighbor part and own coefficient.
    fn split(&self, u: &[f64], i: usize, out: &mut [f64]) {
        for d in 0..self.k {
            let mut s = 0.0;
            for a in &self.arms[(i * self.k + d) * 2..(i * self.k + d) * 2 + 2] {
                s += a.coef * if a.target == NONE { a.bval } else { u[a.target as usize] };
            }
            out[d] = s;
        }
    }

    /// Value and gradient of candidate `c` at node `i`.
    ///
    /// Second differences below δ = 1e-6·fᵢ enter through fᵢ·min(a, δ), which keeps the
    /// operator strictly monotone away from convexity and leaves it unchanged once all a ≥ δ.
    fn candidate(&self, c: usize, a: &[f64], i: usize) -> (f64, [(usize, f64); 3], usize) {
        let fi = self.fvals[i];
        let delta = 1e-6 * fi;
        let mut out = [(0usize, 0.0f64); 3];
        match self.scheme {
            Scheme::Superbase => {
                let t = self.triples[c];
                let x = [a[t[0]], a[t[1]], a[t[2]]];
                let (h, g) = superbase_form(x[0].max(delta), x[1].max(delta), x[2].max(delta));
                let mut v = h;
                for m in 0..3 {
                    if x[m] > delta {
                        out[m] = (t[m], g[m]);
                    } else {
                        v += fi * (x[m] - delta);
                        out[m] = (t[m], fi);
                    }
                }
                (v, out, 3)
            }
            Scheme::OrthogonalPairs => {
                let p = self.pairs[c];
                let n = [self.norms[p[0]], self.norms[p[1]]];
                let x = [a[p[0]] / n[0], a[p[1]] / n[1]];
                let y = [x[0].max(delta), x[1].max(delta)];
                let mut v = y[0] * y[1];
                for m in 0..2 {
                    if x[m] > delta {
                        out[m] = (p[m], y[1 - m] / n[m]);
                    } else {
                        v += fi * (x[m] - delta);
                        out[m] = (p[m], fi / n[m]);
                    }
                }
                (v, out, 2)
            }
        }
    }

    /// Scheme value at node `i`; returns (value, active candidate).
    fn operator(&self, a: &[f64], i: usize) -> (f64, usize) {
        let count = match self.scheme {
            Scheme::Superbase => self.triples.len(),
            Scheme::OrthogonalPairs => self.pairs.len(),
        };
        let mut best = (f64::INFINITY, 0);
        for c in 0..count {
            let v = self.candidate(c, a, i).0;
            if v < best.0 {
                best = (v, c);
            }
        }
        best
    }

    fn second_differences(&self, u: &[f64], i: usize, a: &mut [f64]) {
        self.split(u, i, a);
        for d in 0..self.k {
            a[d] += self.c0[i * self.k + d] * u[i];
        }
    }

    fn residual(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n())
            .into_par_iter()
            .map_init(
                || vec![0.0; self.k],
                |a, i| {
                    self.second_differences(u, i, a);
                    self.operator(a, i).0 - self.rhs[i]
                },
            )
            .collect()
    }

    /// Rows of −J where J is the generalized Jacobian of the residual.
    fn neg_jacobian(&self, u: &[f64]) -> Csr {
        let rows: Vec<Vec<(usize, f64)>> = (0..self.n())
            .into_par_iter()
            .map_init(
                || vec![0.0; self.k],
                |a, i| {
                    self.second_differences(u, i, a);
                    let (_, c) = self.operator(a, i);
                    let (_, weights, len) = self.candidate(c, a, i);
                    let weights = &weights[..len];
                    let mut row = Vec::with_capacity(1 + 2 * len);
                    let mut diag = 0.0;
                    for &(d, w) in weights {
                        if w == 0.0 {
                            continue;
                        }
                        diag += w * self.c0[i * self.k + d];
                        for arm in &self.arms[(i * self.k + d) * 2..(i * self.k + d) * 2 + 2] {
                            if arm.target != NONE {
                                row.push((arm.target as usize, -w * arm.coef));
                            }
                        }
                    }
                    row.push((i, -diag));
                    row
                },
            )
            .collect();
        Csr::from_rows(rows)
    }

    /// Solves Δu = 2f with the axis second differences (Shortley–Weller near the boundary).
    fn laplacian_guess(&self, cfg: &SolverConfig) -> Vec<f64> {
        let n = self.n();
        let mut rows = Vec::with_capacity(n);
        let mut b = vec![0.0; n];
        for i in 0..n {
            let mut row = Vec::with_capacity(5);
            let mut diag = 0.0;
            b[i] = -2.0 * self.fvals[i];
            for d in 0..2 {
                diag += self.c0[i * self.k + d];
                for arm in &self.arms[(i * self.k + d) * 2..(i * self.k + d) * 2 + 2] {
                    if arm.target == NONE {
                        b[i] += arm.coef * arm.bval;
                    } else {
                        row.push((arm.target as usize, -arm.coef));
                    }
                }
            }
            row.push((i, -diag));
            rows.push(row);
        }
        let a = Csr::from_rows(rows);
        let mut x = vec![0.0; n];
        if let Some(pre) = Ilu0::new(&a) {
            bicgstab(&a, &pre, &b, &mut x, cfg.linear_tol, 20 * n.max(100));
        }
        x
    }

    /// One nonlinear Gauss–Seidel sweep solving each node's scalar equation.
    fn gauss_seidel(&self, u: &mut [f64]) {
        let mut base = vec![0.0; self.k];
        let mut a = vec![0.0; self.k];
        for i in 0..self.n() {
            self.split(u, i, &mut base);
            let c0 = &self.c0[i * self.k..(i + 1) * self.k];
            let eval = |s: f64, a: &mut Vec<f64>| {
                for d in 0..self.k {
                    a[d] = base[d] + c0[d] * s;
                }
                self.operator(a, i).0 - self.rhs[i]
            };
            // F is nonincreasing in s; bracket a sign change
            let scale = c0.iter().map(|c| c.abs()).fold(0.0, f64::max);
            let mut step = self.fvals[i] / scale + 1e-300;
            let mut lo = u[i];
            let mut hi = u[i];
            let f0 = eval(u[i], &mut a);
            if f0 == 0.0 {
                continue;
            }
            if f0 > 0.0 {
                loop {
                    hi += step;
                    step *= 2.0;
                    if eval(hi, &mut a) <= 0.0 {
                        break;
                    }
                }
            } else {
                loop {
                    lo -= step;
                    step *= 2.0;
                    if eval(lo, &mut a) >= 0.0 {
                        break;
                    }
                }
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if eval(mid, &mut a) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            u[i] = 0.5 * (lo + hi);
        }
    }

    fn convexity_violations(&self, u: &[f64]) -> usize {
        let mut a = vec![0.0; self.k];
        let mut count = 0;
        for i in 0..self.n() {
            self.second_differences(u, i, &mut a);
            count += a.iter().filter(|&&x| x < -1e-10).count();
        }
        count
    }

    fn field(&self, u: &[f64]) -> Result<ScalarField> {
        let mut values = vec![f64::NAN; self.grid.len()];
        let mut valid = vec![false; self.grid.len()];
        for (i, &idx) in self.unknown_nodes.iter().enumerate() {
            values[idx] = u[i];
            valid[idx] = true;
        }
        for &(idx, v) in &self.fixed {
            values[idx] = v;
            valid[idx] = true;
        }
        ScalarField::new(self.grid, values, valid)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Grid covering the domain with `n` nodes along the longer side of its bounding box.
pub fn grid_for(domain: &Domain, n: usize) -> Result<Grid> {
    let (lo, hi) = domain.bbox();
    Grid::covering(lo, hi, n)
}

/// Solves det^{1/2} D²v = f with v = g on the boundary, on a grid sized by `cfg.grid`.
pub fn solve(domain: &Domain, f: Fun, g: Fun, cfg: &SolverConfig) -> Result<(ScalarField, SolveReport)> {
    cfg.validate()?;
    let grid = grid_for(domain, cfg.grid)?;
    solve_on(domain, &grid, f, g, cfg)
}

/// As [`solve`] on a caller-supplied grid, which must cover the domain.
pub fn solve_on(domain: &Domain, grid: &Grid, f: Fun, g: Fun, cfg: &SolverConfig) -> Result<(ScalarField, SolveReport)> {
    cfg.validate()?;
    let disc = Disc::build(domain, grid, f, g, cfg)?;
    let n = disc.n();
    let tol = cfg.tol * disc.rhs_scale();
    let mut u = disc.laplacian_guess(cfg);
    let mut res = disc.residual(&u);
    let mut rnorm = max_abs(&res);
    let mut report = SolveReport { tolerance: tol, unknowns: n, spacing: grid.spacing, ..Default::default() };
    let mut iter = 0;
    while rnorm > tol && iter < cfg.max_iter {
        iter += 1;
        let a = disc.neg_jacobian(&u);
        let mut delta = vec![0.0; n];
        let eta = (1e-2 * rnorm / disc.rhs_scale()).clamp(cfg.linear_tol, 1e-4);
        let solved = Ilu0::new(&a).map(|pre| bicgstab(&a, &pre, &res, &mut delta, eta, 4 * n.max(250)));
        let mut accepted = false;
        if solved.is_some() && delta.iter().all(|d| d.is_finite()) {
            let mut lam = 1.0;
            while lam >= cfg.min_damping {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(x, d)| x + lam * d).collect();
                let tres = disc.residual(&trial);
                let tn = l2(&tres);
                if tn < (1.0 - 1e-4 * lam) * l2(&res) {
                    u = trial;
                    rnorm = max_abs(&tres);
                    res = tres;
                    accepted = true;
                    break;
                }
                lam *= 0.5;
            }
        }
        if !accepted {
            for _ in 0..cfg.gs_sweeps {
                disc.gauss_seidel(&mut u);
            }
            report.gs_sweeps += cfg.gs_sweeps;
            res = disc.residual(&u);
            rnorm = max_abs(&res);
        }
        log::debug!("newton iteration {iter}: residual {rnorm:.3e}, accepted {accepted}");
    }
    let field = disc.field(&u)?;
    let (mv, mp) = field.min().expect("nonempty");
    report.iterations = iter;
    report.residual = rnorm;
    report.min_value = mv;
    report.argmin = mp;
    report.convexity_violations = disc.convexity_violations(&u);
    if rnorm > tol {
        return Err(Error::IterationLimit { report: Box::new(report) });
    }
    Ok((field, report))
}

/// Sol(Ω): the solution with unit right-hand side and zero boundary values.
pub fn solve_unit(domain: &Domain, cfg: &SolverConfig) -> Result<ScalarField> {
    Ok(solve(domain, &|_| 1.0, &|_| 0.0, cfg)?.0)
}

/// Sol(Ω) on a caller-supplied grid, with its report.
pub fn solve_unit_on(domain: &Domain, grid: &Grid, cfg: &SolverConfig) -> Result<(ScalarField, SolveReport)> {
    solve_on(domain, grid, &|_| 1.0, &|_| 0.0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexPolytope;

    fn disk() -> Domain {
        Domain::disk([0.0, 0.0], 1.0).unwrap()
    }

    fn square() -> Domain {
        Domain::polygon(ConvexPolytope::from_points_2d(&[[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]).unwrap()).unwrap()
    }

    fn max_err(v: &ScalarField, exact: impl Fn([f64; 2]) -> f64) -> f64 {
        v.valid_nodes().map(|(_, p, x)| (x - exact(p)).abs()).fold(0.0, f64::max)
    }

    fn cfg(n: usize) -> SolverConfig {
        SolverConfig { grid: n, ..Default::default() }
    }

    #[test]
    fn unit_disk_paraboloid() {
        let (v, rep) = solve(&disk(), &|_| 1.0, &|_| 0.0, &cfg(65)).unwrap();
        assert!(max_err(&v, |p| 0.5 * (p[0] * p[0] + p[1] * p[1] - 1.0)) < 1e-9);
        assert!((rep.min_value + 0.5).abs() < 1e-9);
        assert_eq!(rep.convexity_violations, 0);
        assert!(rep.residual <= rep.tolerance);
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let ex = |p: [f64; 2]| (0.5 * (p[0] * p[0] + p[1] * p[1])).exp();
        let f = |p: [f64; 2]| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            (0.5 * r2).exp() * (1.0 + r2).sqrt()
        };
        let errs: Vec<f64> = [33, 65, 129].iter().map(|&n| max_err(&solve(&disk(), &f, &ex, &cfg(n)).unwrap().0, ex)).collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.8, "{errs:?}");
        }
    }

    #[test]
    fn comparison_principle_on_square() {
        let c = cfg(41);
        let (u1, _) = solve(&square(), &|p| 1.0 + 0.3 * p[0] * p[0], &|_| 0.0, &c).unwrap();
        let (u2, _) = solve(&square(), &|p| 1.2 + 0.3 * p[0] * p[0] + 0.1 * p[1].abs(), &|_| 0.0, &c).unwrap();
        for ((a, b), ok) in u1.values().iter().zip(u2.values()).zip(u1.valid_mask()) {
            if *ok {
                assert!(a >= b);
            }
        }
    }

    #[test]
    fn both_schemes_are_discretely_convex() {
        for scheme in [Scheme::Superbase, Scheme::OrthogonalPairs] {
            let c = SolverConfig { grid: 49, scheme, ..Default::default() };
            let (_, rep) = solve(&square(), &|p| 1.0 + 0.5 * p[0].abs(), &|_| 0.0, &c).unwrap();
            assert_eq!(rep.convexity_violations, 0);
            assert!(rep.min_value < -0.5 && rep.min_value > -1.0);
        }
    }

    #[test]
    fn ellipse_unit_minimum_within_bounds() {
        let d = Domain::ellipse([0.0, 0.0], [2.0, 1.0], 0.0).unwrap();
        let v = solve_unit(&d, &cfg(97)).unwrap();
        let (m, _) = v.min().unwrap();
        assert!((-2.0..=-0.5).contains(&m), "{m}");
        // exact solution (ab/2)(x²/a² + y²/b² − 1), minimum −ab/2
        assert!((m + 1.0).abs() < 1e-3);
    }

    #[test]
    fn nonpositive_rhs_is_domain_error() {
        let e = solve(&disk(), &|p| p[0], &|_| 0.0, &cfg(17)).unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
    }

    #[test]
    fn iteration_limit_carries_report() {
        let c = SolverConfig { grid: 33, max_iter: 1, ..Default::default() };
        match solve(&square(), &|_| 1.0, &|_| 0.0, &c) {
            Err(Error::IterationLimit { report }) => assert_eq!(report.iterations, 1),
            other => panic!("expected iteration limit, got {other:?}"),
        }
    }

    #[test]
    fn gauss_seidel_sweeps_reduce_residual() {
        let grid = grid_for(&square(), 17).unwrap();
        let c = cfg(17);
        let disc = Disc::build(&square(), &grid, &|_| 1.0, &|_| 0.0, &c).unwrap();
        let mut u = disc.laplacian_guess(&c);
        let r0 = l2(&disc.residual(&u));
        for _ in 0..20 {
            disc.gauss_seidel(&mut u);
        }
        assert!(l2(&disc.residual(&u)) < 0.5 * r0);
    }
}
