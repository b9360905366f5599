//! The acceptance suite: one runner per criterion, shared by `malab verify` and the test target.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{
    choose_q_in, dini_integral, eval_theorem_bounds, gamma_range, log_grid, BoundConstants, BoundReport, ClosedForm, Modulus,
};
use crate::error::{Error, Result};
use crate::experiments::{
    discontinuous_pipeline, measure_holder, mollify, powerlaw_experiment, random_polygon, DomainSpec, PipelineConfig, PowerlawSpec,
};
use crate::field::{Grid, ScalarField};
use crate::geometry::{group_action, group_action_with, ActionBudget, AffineMap};
use crate::iteration::{hessian_limit, run_chain, ChainConfig, SectionChain, Termination};
use crate::sections::extract_section;
use crate::solver::{
    alexandrov_ratio, comparison_violation, grid_for, minimum_estimates, separation_check, solve, solve_on, solve_unit_on, Domain,
    SolverConfig,
};

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {} [{}] {}: {} ({:.1} s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}

pub const TITLES: [&str; 9] = [
    "solver accuracy",
    "principle suite",
    "transform identities",
    "chain suite",
    "Hessian recovery",
    "bound calculus",
    "power law",
    "mollification",
    "determinism",
];

/// Wall-clock budgets in seconds.
pub const SOLVE_BUDGET: f64 = 60.0;
pub const POWERLAW_BUDGET: f64 = 900.0;
pub const SUITE_BUDGET: f64 = 1800.0;

/// Runs criterion `id` (1..=9). Numerical errors become failures with the error text as detail.
pub fn run_criterion(id: u8) -> Result<CriterionResult> {
    let title = *TITLES.get((id as usize).wrapping_sub(1)).ok_or_else(|| Error::Domain(format!("no criterion {id}")))?;
    let t = Instant::now();
    let out = match id {
        1 => solver_accuracy(),
        2 => principle_suite(),
        3 => transform_identities(),
        4 => chain_suite(),
        5 => hessian_recovery(),
        6 => bound_calculus(),
        7 => power_law(),
        8 => mollification(),
        _ => determinism(),
    };
    let (pass, detail) = out.unwrap_or_else(|e| (false, format!("error: {e}")));
    Ok(CriterionResult { id, title, pass, detail, seconds: t.elapsed().as_secs_f64() })
}

/// All nine criteria in order; `progress` sees each result as it completes.
pub fn run_all(mut progress: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    (1..=9)
        .map(|id| {
            let r = run_criterion(id).expect("ids are in range");
            progress(&r);
            r
        })
        .collect()
}

type Outcome = Result<(bool, String)>;

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn max_error(v: &ScalarField, exact: impl Fn([f64; 2]) -> f64) -> f64 {
    v.valid_nodes().map(|(_, p, x)| (x - exact(p)).abs()).fold(0.0, f64::max)
}

fn paraboloid(p: [f64; 2]) -> f64 {
    0.5 * (p[0] * p[0] + p[1] * p[1] - 1.0)
}

fn exp_solution(p: [f64; 2]) -> f64 {
    (0.5 * (p[0] * p[0] + p[1] * p[1])).exp()
}

/// (det D² exp(|x|²/2))^{1/2} = exp(|x|²/2)(1 + |x|²)^{1/2}.
fn exp_rhs(p: [f64; 2]) -> f64 {
    let r2 = p[0] * p[0] + p[1] * p[1];
    (0.5 * r2).exp() * (1.0 + r2).sqrt()
}

fn solver_accuracy() -> Outcome {
    let disk = Domain::disk([0.0, 0.0], 1.0)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, tol) in [(129, 5e-3), (257, 1.5e-3)] {
        let cfg = SolverConfig { grid: n, ..Default::default() };
        let t = Instant::now();
        let (v, _) = solve(&disk, &|_| 1.0, &|_| 0.0, &cfg)?;
        let s1 = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let (w, _) = solve(&disk, &exp_rhs, &exp_solution, &cfg)?;
        let s2 = t.elapsed().as_secs_f64();
        let (e1, e2) = (max_error(&v, paraboloid), max_error(&w, exp_solution));
        pass &= e1 <= tol && e2 <= tol && s1 < SOLVE_BUDGET && s2 < SOLVE_BUDGET;
        parts.push(format!("n={n}: paraboloid {e1:.2e}, exp {e2:.2e} (tol {tol:.1e}; {s1:.1} s, {s2:.1} s)"));
    }
    Ok((pass, parts.join("; ")))
}

/// 1 + a (1 + sin(k·x + c))/2 with random a ∈ [0, amp], |k| ≤ 3.
fn random_bump(rng: &mut ChaCha8Rng, amp: f64) -> impl Fn([f64; 2]) -> f64 + Sync + Send + Copy {
    let a = rng.random_range(0.0..amp);
    let k = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    let c = rng.random_range(0.0..std::f64::consts::TAU);
    move |p: [f64; 2]| a * 0.5 * (1.0 + (k[0] * p[0] + k[1] * p[1] + c).sin())
}

pub const PRINCIPLE_INSTANCES: u64 = 50;
const PRINCIPLE_GRID: usize = 65;
const COMPARISON_TOL: f64 = 1e-7;
const SCALE_TOL: f64 = 1e-10;
const SEPARATION_PAIRS: usize = 400;
const COMPARISON_EST_TOL: f64 = 1e-6;
const MINIMUM_TOL: f64 = 5e-3;

#[derive(Default)]
struct PrincipleTally {
    comparison: usize,
    alexandrov: usize,
    separation: usize,
    minimum: usize,
    difference: usize,
    min_gap: usize,
    worst_comparison: f64,
    worst_scale: f64,
    worst_separation: f64,
    worst_difference_margin: f64,
}

fn principle_instance(seed: u64) -> Result<[f64; 7]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poly = random_polygon(1000 + seed)?;
    let dom = Domain::polygon(poly)?;
    let cfg = SolverConfig { grid: PRINCIPLE_GRID, ..Default::default() };
    let grid = grid_for(&dom, PRINCIPLE_GRID)?;

    let b1 = random_bump(&mut rng, 0.5);
    let b2 = random_bump(&mut rng, 0.5);
    let f1 = move |p: [f64; 2]| 1.0 + b1(p);
    let f2 = move |p: [f64; 2]| f1(p) + b2(p);
    let (u1, _) = solve_on(&dom, &grid, &f1, &|_| 0.0, &cfg)?;
    let (u2, _) = solve_on(&dom, &grid, &f2, &|_| 0.0, &cfg)?;
    let comparison = comparison_violation(&u1, &u2)?;

    let lambda = rng.random_range(0.2..5.0);
    let ratio = alexandrov_ratio(&u1, &dom)?;
    let scaled = alexandrov_ratio(&u1.map(|_, x| lambda * x), &dom)?;
    let scale = (scaled - ratio).abs() / ratio;

    let count = u1.grid().len();
    let valid: Vec<usize> = (0..count).filter(|&k| u1.valid_mask()[k]).collect();
    let pairs: Vec<(usize, usize)> =
        (0..SEPARATION_PAIRS).map(|_| (valid[rng.random_range(0..valid.len())], valid[rng.random_range(0..valid.len())])).collect();
    let separation = separation_check(&u1, &dom, ratio, &pairs)?;

    let delta = rng.random_range(0.01..0.1);
    let b3 = random_bump(&mut rng, 2.0);
    let f = move |p: [f64; 2]| 1.0 + delta * (b3(p) - 1.0).clamp(-1.0, 1.0);
    let sup = valid.iter().map(|&k| (f(u1.grid().node_at(k)) - 1.0).abs()).fold(0.0, f64::max);
    let (u, _) = solve_on(&dom, &grid, &f, &|_| 0.0, &cfg)?;
    let (w, _) = solve_unit_on(&dom, &grid, &cfg)?;
    let est = minimum_estimates(&u, &w, sup, 1.0, 2.0)?;
    let margin = est.sup_diff - 0.5 * est.r2 * est.r2 * est.delta;
    Ok([
        comparison,
        scale,
        separation,
        if est.minimum_ok(MINIMUM_TOL) { 0.0 } else { 1.0 },
        margin,
        if est.min_gap_ok(1e-12) { 0.0 } else { 1.0 },
        est.min_w,
    ])
}

fn principle_suite() -> Outcome {
    let results: Vec<Result<[f64; 7]>> = (0..PRINCIPLE_INSTANCES).into_par_iter().map(principle_instance).collect();
    let mut t = PrincipleTally { worst_comparison: f64::NEG_INFINITY, worst_difference_margin: f64::NEG_INFINITY, ..Default::default() };
    for r in results {
        let [cmp, scale, sep, min_bad, margin, gap_bad, _] = r?;
        t.comparison += usize::from(cmp > COMPARISON_TOL);
        t.alexandrov += usize::from(!(scale <= SCALE_TOL));
        t.separation += usize::from(!(sep <= 1.0 + 1e-12));
        t.minimum += usize::from(min_bad > 0.0);
        t.difference += usize::from(margin > COMPARISON_EST_TOL);
        t.min_gap += usize::from(gap_bad > 0.0);
        t.worst_comparison = t.worst_comparison.max(cmp);
        t.worst_scale = t.worst_scale.max(scale);
        t.worst_separation = t.worst_separation.max(sep);
        t.worst_difference_margin = t.worst_difference_margin.max(margin);
    }
    let fails = t.comparison + t.alexandrov + t.separation + t.minimum + t.difference + t.min_gap;
    Ok((
        fails == 0,
        format!(
            "{PRINCIPLE_INSTANCES} instances; failures: comparison {} (max u₂−u₁ {:.1e}), Alexandrov scaling {} (max rel {:.1e}), \
             separation {} (max {:.3}), min w {} , sup|u−w| ≤ 2δ {} (max excess {:.1e}), min gap {}",
            t.comparison,
            t.worst_comparison,
            t.alexandrov,
            t.worst_scale,
            t.separation,
            t.worst_separation,
            t.minimum,
            t.difference,
            t.worst_difference_margin,
            t.min_gap
        ),
    ))
}

fn random_map(rng: &mut ChaCha8Rng, spread: f64) -> Result<AffineMap> {
    loop {
        let m = [
            [1.0 + rng.random_range(-spread..spread), rng.random_range(-spread..spread)],
            [rng.random_range(-spread..spread), 1.0 + rng.random_range(-spread..spread)],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() > 0.3 {
            return AffineMap::from_2x2(m, [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]);
        }
    }
}

const TRANSFORM_INSTANCES: u64 = 20;

fn transform_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_comp, mut worst_det, mut worst_haus) = (0.0f64, 0.0f64, 0.0f64);
    let mut haus_fail = 0;
    let b = ActionBudget { relative_error: f64::INFINITY, ..Default::default() };
    for _ in 0..TRANSFORM_INSTANCES {
        let (a, c, d) = (rng.random_range(0.5..2.0), rng.random_range(-0.3..0.3), rng.random_range(0.5..2.0));
        let g = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let quad = move |p: [f64; 2]| 0.5 * (a * p[0] * p[0] + 2.0 * c * p[0] * p[1] + d * p[1] * p[1]) + g[0] * p[0] + g[1] * p[1] - 1.0;
        let v = ScalarField::from_fn(Grid::covering([-2.0, -2.0], [2.0, 2.0], 161)?, quad, |p| p[0].hypot(p[1]) <= 1.8)?;
        let (t1, t2) = (random_map(&mut rng, 0.25)?, random_map(&mut rng, 0.25)?);

        let target = Grid::covering([-1.0, -1.0], [1.0, 1.0], 61)?;
        let mid = Grid::covering([-3.0, -3.0], [3.0, 3.0], 241)?;
        let two = group_action_with(&t1, &group_action_with(&t2, &v, &mid, b)?, &target, b)?;
        let t12 = t1.compose(&t2);
        let one = group_action_with(&t12, &v, &target, b)?;
        let back = t12.inverse();
        for (k, y, x) in two.valid_nodes() {
            let z = back.apply2(y);
            if one.valid_mask()[k] && z[0].hypot(z[1]) <= 1.0 {
                worst_comp = worst_comp.max((x - one.values()[k]).abs());
            }
        }

        let tv = group_action_with(&t1, &v, &Grid::covering([-2.0, -2.0], [2.0, 2.0], 161)?, b)?;
        let x = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
        let exact = a * d - c * c;
        let got = tv.hessian_at(t1.apply2(x), 2)?.determinant();
        worst_det = worst_det.max((got - exact).abs());

        let h = rng.random_range(0.02..0.08);
        let tv = group_action(&t1, &v)?;
        let lhs = extract_section(&v, x, h)?.boundary.transform(&t1)?;
        let rhs = extract_section(&tv, t1.apply2(x), t1.det().abs() * h)?.boundary;
        let spacing = v.grid().spacing.max(tv.grid().spacing);
        let dist = lhs.hausdorff_2d(&rhs) / spacing;
        worst_haus = worst_haus.max(dist);
        haus_fail += usize::from(dist > 3.0);
    }

    let mut chain_fail = 0;
    for k in 0..1000 {
        let n = 2 + k % 4;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(n, n) * 0.1;
        let Ok(t) = AffineMap::new(a, DVector::zeros(n)) else { continue };
        let s = t.stats();
        let p = (n - 1) as f64;
        let ok = s.norm.powf(1.0 / p) <= s.norm_inv * (1.0 + 1e-10) && s.norm_inv <= s.norm.powf(p) * (1.0 + 1e-10);
        chain_fail += usize::from(!ok);
    }
    let pass = worst_comp <= 1e-8 && worst_det <= 1e-8 && haus_fail == 0 && chain_fail == 0;
    Ok((
        pass,
        format!(
            "composition max {worst_comp:.1e} (≤1e-8), det D² invariance max {worst_det:.1e} (≤1e-8), \
             section commutation max {worst_haus:.2} h_grid (≤3, {haus_fail} failures), norm chain failures {chain_fail}/1000"
        ),
    ))
}

pub const CHAIN_POLYGONS: u64 = 20;
const CHAIN_MIN_STEPS: usize = 5;

fn unit_chain_failures(seed: u64) -> Result<Vec<String>> {
    let poly = random_polygon(seed)?;
    let dom = Domain::polygon(poly)?;
    let (v, _) = solve(&dom, &|_| 1.0, &|_| 0.0, &SolverConfig::default())?;
    let ch = run_chain(&v, &|_| 1.0, [0.0, 0.0], 0.4, &ChainConfig::default())?;
    let mut bad = Vec::new();
    if ch.steps.len() < CHAIN_MIN_STEPS {
        bad.push(format!("polygon {seed}: {} steps ({:?})", ch.steps.len(), ch.termination));
    }
    for s in &ch.steps {
        let c = &s.checks;
        if c.inclusion == Some(false) || c.norm_inv_t == Some(false) || !c.det_identity || s.det_error > 1e-6 || (s.m - 1.0).abs() > 1e-12 {
            bad.push(format!("polygon {seed} step {}: {:?}, M = {}", s.k, c, s.m));
        }
    }
    Ok(bad)
}

/// Hölder trials with Hρ^α = 0.009 ≤ C_mc on the unit disk.
fn holder_chain(trial: u64) -> Result<SectionChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(99 + trial);
    let x = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    let c0 = [x[0] + rng.random_range(-0.1..0.1), x[1] + rng.random_range(-0.1..0.1)];
    let alpha: f64 = rng.random_range(0.3..0.9);
    let h = 0.009 / 0.4f64.powf(alpha);
    let f = move |p: [f64; 2]| 1.0 + h * (p[0] - c0[0]).hypot(p[1] - c0[1]).powf(alpha);
    let disk = Domain::disk([0.0, 0.0], 1.0)?;
    let (v, _) = solve(&disk, &f, &|_| 0.0, &SolverConfig::default())?;
    run_chain(&v, &f, x, 0.4, &ChainConfig::default())
}

pub const HOLDER_TRIALS: u64 = 6;

fn chain_suite() -> Outcome {
    let unit: Vec<Result<Vec<String>>> = (0..CHAIN_POLYGONS).into_par_iter().map(unit_chain_failures).collect();
    let mut bad = Vec::new();
    for r in unit {
        bad.extend(r?);
    }
    let c_m = BoundConstants::default().c_m;
    let mut worst_ratio: f64 = 0.0;
    let mut holder_bad = Vec::new();
    let chains: Vec<Result<SectionChain>> = (0..HOLDER_TRIALS).into_par_iter().map(holder_chain).collect();
    for (trial, ch) in chains.into_iter().enumerate() {
        let ch = ch?;
        let m = ch.compounds();
        let ratio = ch.compound_ratio()?;
        worst_ratio = worst_ratio.max(ratio);
        if !m.windows(2).all(|w| w[1] >= w[0]) || ratio > c_m || matches!(ch.termination, Termination::Failed(_)) {
            holder_bad.push(format!("trial {trial}: M/𝓔₀ = {ratio:.5}, {:?}", ch.termination));
        }
    }
    let detail = format!(
        "{CHAIN_POLYGONS} polygons with f ≡ 1: {} failures{}; {HOLDER_TRIALS} Hölder trials: max M_k/𝓔₀ = {worst_ratio:.5} (Ĉ = {c_m}), {} failures{}",
        bad.len(),
        if bad.is_empty() { String::new() } else { format!(" [{}]", bad.join("; ")) },
        holder_bad.len(),
        if holder_bad.is_empty() { String::new() } else { format!(" [{}]", holder_bad.join("; ")) },
    );
    Ok((bad.is_empty() && holder_bad.is_empty(), detail))
}

/// v = x²/(2(1−y)) + y²/2 − y³/6 + εx⁴/12 and its Hessian.
pub const MANUFACTURED_EPS: f64 = 0.3;

pub fn manufactured_solution(p: [f64; 2]) -> f64 {
    let e = MANUFACTURED_EPS;
    p[0] * p[0] / (2.0 * (1.0 - p[1])) + p[1] * p[1] / 2.0 - p[1].powi(3) / 6.0 + e * p[0].powi(4) / 12.0
}

pub fn manufactured_hessian(p: [f64; 2]) -> Matrix2<f64> {
    let s = 1.0 / (1.0 - p[1]);
    let off = p[0] * s * s;
    Matrix2::new(s + MANUFACTURED_EPS * p[0] * p[0], off, off, p[0] * p[0] * s * s * s + 1.0 - p[1])
}

fn hessian_recovery() -> Outcome {
    let g = Grid::covering([-1.0, -1.0], [1.0, 1.0], 129)?;
    let v = ScalarField::from_fn(g, manufactured_solution, |p| p[0].hypot(p[1]) <= 0.8)?;
    let f = |p: [f64; 2]| manufactured_hessian(p).determinant().sqrt();
    let x = [0.3, 0.2];
    let ch = run_chain(&v, &f, x, 0.3, &ChainConfig::default())?;
    let lim = hessian_limit(&ch, &v, x)?;
    let exact = manufactured_hessian(x);
    let rel = |m: &[[f64; 2]; 2]| (Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]) - exact).norm() / exact.norm();
    let errors: Vec<f64> = lim.pulled.iter().map(rel).collect();
    let last = *errors.last().expect("at least three steps");
    let trace_ok = errors.windows(2).skip(1).all(|w| w[1] <= 1.1 * w[0]);
    Ok((
        last <= 0.05 && trace_ok,
        format!(
            "{} steps, final relative error {last:.2e} (≤5e-2), error trace [{}], nonincreasing within 10%: {trace_ok}",
            ch.steps.len(),
            sci(&errors)
        ),
    ))
}

fn bound_calculus() -> Outcome {
    let grid = log_grid(1e-6, 1.0, 61);
    let mut worst: f64 = 0.0;
    let mut rel = |got: f64, exact: f64| worst = worst.max((got - exact).abs() / exact.abs());
    for c in [0.05, 0.2] {
        let m = Modulus::closed(ClosedForm::Constant { c }, grid.clone())?;
        for (a, b) in [(1e-4, 0.5), (1e-3, 0.1)] {
            rel(dini_integral(&m, a, b, 1)?, c * (b / a).ln());
            rel(dini_integral(&m, a, b, 2)?, c * (1.0 / a - 1.0 / b));
        }
    }
    for (h, alpha) in [(2.0, 0.5), (0.3, 0.25), (1.5, 0.8)] {
        let m = Modulus::closed(ClosedForm::Holder { h, alpha }, grid.clone())?;
        for (a, b) in [(0.0, 0.8), (1e-5, 0.1)] {
            rel(dini_integral(&m, a, b, 1)?, h * (b.powf(alpha) - a.powf(alpha)) / alpha);
        }
        rel(dini_integral(&m, 1e-3, 0.5, 2)?, h * (1e-3f64.powf(alpha - 1.0) - 0.5f64.powf(alpha - 1.0)) / (1.0 - alpha));
    }
    for (s, a) in [(1.0, 1.0), (0.5, 2.0), (0.2, 1.5)] {
        let m = Modulus::closed(ClosedForm::Log { s, a }, grid.clone())?;
        let (lo, hi): (f64, f64) = (1e-8, 0.1);
        let (ll, lh) = (-lo.ln(), -hi.ln());
        let exact = if a == 1.0 { s * (ll / lh).ln() } else { s * (lh.powf(1.0 - a) - ll.powf(1.0 - a)) / (a - 1.0) };
        rel(dini_integral(&m, lo, hi, 1)?, exact);
    }
    let quad_ok = worst <= 1e-6;

    let consts = BoundConstants::default();
    let step = grid[1] / grid[0];
    let mut q_fail = 0;
    for (h, alpha, rho) in [(1.0, 0.5, 0.4), (0.2, 0.3, 0.4), (5.0, 0.9, 0.4), (0.01, 0.5, 0.3), (0.001, 0.7, 0.4)] {
        let m = Modulus::closed(ClosedForm::Holder { h, alpha }, grid.clone())?;
        let q = choose_q_in(&m, rho, consts.c_mc)?;
        let expect: f64 = (consts.c_mc / h).powf(1.0 / alpha).min(rho);
        q_fail += usize::from(!(q <= expect * (1.0 + 1e-12) && q >= expect / step));
    }

    // β₂ by hand: β = 1.12Ĉ₅/(−h_c ln(1.2√h_c)), β₂ = β max(1, β₁).
    let beta = 1.12 * consts.c5 / (-consts.h_c * (1.2 * consts.h_c.sqrt()).ln());
    let b2 = beta * consts.beta1.max(1.0);
    let limit = consts.c_mc.min(1.0 / b2);
    let mut g_fail = 0;
    let r = gamma_range(&Modulus::closed(ClosedForm::Holder { h: 1.0, alpha: 0.5 }, grid.clone())?, &consts)?;
    g_fail += usize::from(!(r.lo == 0.0 && r.hi == 1.0 && r.closed_left));
    let c = 0.4 * limit;
    let r = gamma_range(&Modulus::closed(ClosedForm::Constant { c }, grid.clone())?, &consts)?;
    g_fail += usize::from(!((r.lo - b2 * c).abs() <= 1e-12 * b2 * c && r.closed_left && r.contains(b2 * c) && !r.contains(0.99 * b2 * c)));
    g_fail += usize::from(gamma_range(&Modulus::closed(ClosedForm::Constant { c: 1.5 * limit }, grid.clone())?, &consts).is_ok());

    let m = Modulus::closed(ClosedForm::Holder { h: 0.02, alpha: 0.5 }, grid)?;
    let report = eval_theorem_bounds(&m, 1e-4, &consts, 1.0, 0.4)?;
    let back: BoundReport = serde_json::from_str(&serde_json::to_string(&report)?)?;
    let again = eval_theorem_bounds(&m, report.d_bar, &back.constants, back.f_max, back.rho)?;
    let replay = (again.hessian - report.hessian).abs() <= 1e-12 * report.hessian.abs()
        && (again.hessian_difference.small - report.hessian_difference.small).abs() <= 1e-12 * report.hessian_difference.small.abs();

    Ok((
        quad_ok && q_fail == 0 && g_fail == 0 && replay,
        format!(
            "quadrature max rel error {worst:.1e} (≤1e-6), q_in mismatches {q_fail}/5, γ-range mismatches {g_fail}/3, \
             replay from embedded constants {replay}"
        ),
    ))
}

pub fn powerlaw_spec() -> PowerlawSpec {
    PowerlawSpec {
        domain: DomainSpec::Disk { r: 1.0 },
        alpha: 0.5,
        hs: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
        center: [0.0, 0.0],
        rho: 0.3,
        grid: 257,
        constants: BoundConstants::default(),
        solver: SolverConfig::default(),
        seed: 7,
    }
}

fn power_law() -> Outcome {
    let t = Instant::now();
    let r = powerlaw_experiment(&powerlaw_spec())?;
    let secs = t.elapsed().as_secs_f64();
    if let Some(e) = &r.failure {
        return Ok((false, format!("run stopped after {} rows: {e}", r.rows.len())));
    }
    let values: Vec<String> = r.rows.iter().map(|row| format!("{:.4}", row.seminorm)).collect();
    Ok((
        r.nondecreasing && r.superlinear && r.dominated && secs < POWERLAW_BUDGET,
        format!(
            "seminorms [{}], nondecreasing {}, top-3 slope {:.5} (>1), dominated {}, {secs:.0} s (<{POWERLAW_BUDGET:.0} s)",
            values.join(", "),
            r.nondecreasing,
            r.slope_top3.unwrap_or(f64::NAN),
            r.dominated
        ),
    ))
}

pub const STEP_JUMP: f64 = 0.008;
pub const PIPELINE_GAMMA: f64 = 0.5;

pub fn step_rhs(p: [f64; 2]) -> f64 {
    if p[0] > 0.05 {
        1.0 + STEP_JUMP
    } else {
        1.0
    }
}

fn mollification() -> Outcome {
    let disk = Domain::disk([0.0, 0.0], 1.0)?;
    let m = Modulus::closed(ClosedForm::Constant { c: STEP_JUMP }, log_grid(1e-4, 2.0, 40))?;
    let cfg = PipelineConfig {
        indices: vec![8, 16, 32, 64],
        gamma: PIPELINE_GAMMA,
        rho: 0.4,
        grid: 129,
        constants: BoundConstants::default(),
        solver: SolverConfig::default(),
        seed: 1,
    };
    let r = discontinuous_pipeline(&step_rhs, &m, &disk, &cfg)?;
    let cond1 = r.rows.iter().all(|row| row.mollify.cond1_ok);
    let cond2 = r.rows.iter().all(|row| row.mollify.cond2_ok);
    let admissible = r.gamma_range.as_ref().is_some_and(|g| g.contains(cfg.gamma));
    let diffs: Vec<f64> = r.rows.iter().filter_map(|row| row.sup_diff_prev).collect();
    let seminorms: Vec<f64> = r.rows.iter().map(|row| row.seminorm).collect();
    Ok((
        cond1 && cond2 && admissible && r.cauchy_ok == Some(true) && r.bounded_ok,
        format!(
            "i ∈ {:?}: cond 1 {cond1}, cond 2 {cond2}, γ = {} admissible {admissible}, sup differences [{}] decreasing {}, \
             [Dv_i]_(1−γ) {seminorms:.4?} bounded {}",
            cfg.indices,
            cfg.gamma,
            sci(&diffs),
            r.cauchy_ok == Some(true),
            r.bounded_ok
        ),
    ))
}

/// Serialized outputs of a small fixed-seed run of every randomized pipeline.
pub fn determinism_outputs() -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut out = Vec::new();
    let disk = Domain::disk([0.0, 0.0], 1.0)?;
    let f = |p: [f64; 2]| 1.0 + 0.05 * p[0];
    let (v, _) = solve(&disk, &f, &|_| 0.0, &SolverConfig { grid: 97, ..Default::default() })?;
    let mut bytes = Vec::new();
    crate::io::write_field(&v, &mut bytes)?;
    out.push(("solve", bytes));
    let ch = run_chain(&v, &f, [0.0, 0.0], 0.4, &ChainConfig { k_max: 3, min_cells: 48, ..Default::default() })?;
    out.push(("chain", crate::io::stamped_json("chain", ch.config.seed, &ch)?.into_bytes()));
    let rec = measure_holder(&v, &disk, 0.3, 2, 0.5, 11)?;
    out.push(("holder", crate::io::stamped_json("holder", 11, &rec)?.into_bytes()));
    let spec = PowerlawSpec { hs: vec![0.5, 1.0, 2.0, 4.0, 8.0], grid: 65, ..powerlaw_spec() };
    out.push(("powerlaw", powerlaw_experiment(&spec)?.to_csv().into_bytes()));
    let m = mollify(&step_rhs, &disk, &grid_for(&disk, 65)?, 8, 0.4, 5)?;
    let mut bytes = crate::io::stamped_json("mollify", 5, &m.diagnostics)?.into_bytes();
    crate::io::write_field(&m.field, &mut bytes)?;
    out.push(("mollify", bytes));
    Ok(out)
}

fn determinism() -> Outcome {
    let a = determinism_outputs()?;
    let b = determinism_outputs()?;
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect();
    let names: Vec<&str> = a.iter().map(|x| x.0).collect();
    Ok((differing.is_empty(), format!("outputs {names:?} compared byte for byte across two runs; differing: {differing:?}")))
}
