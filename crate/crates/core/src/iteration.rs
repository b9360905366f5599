//! Shrinking-section iteration: the one-step perturbation, the transform chain P_k, Hessian
//! recovery from the chain, and the backward transform to original coordinates.

use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bounds::{choose_q_in, dini_integral, estimate_modulus_about, log_grid, BoundConstants, Modulus};
use crate::error::{Error, Result};
use crate::field::{Grid, Interp, ScalarField};
use crate::geometry::{dist2, group_action_with, ActionBudget, AffineMap, ConvexPolytope};
use crate::sections::{extract_section, first_section_height, normalize_section, supporting_plane, SectionDiagnostics};
use crate::solver::{solve_on, solve_unit_on, Domain, SolverConfig};

type Fun<'a> = &'a (dyn Fn([f64; 2]) -> f64 + Sync);

/// Relative finite-difference noise band used by the Hessian-based checks.
pub const HESSIAN_NOISE: f64 = 0.02;

/// Hessian increments below this fraction of the Hessian never count as stalling.
pub const DIVERGENCE_FLOOR: f64 = 1e-3;

/// Absolute slack for sup-norm comparisons of two discrete solutions.
pub const SUP_NOISE: f64 = 1e-6;

/// Smallest eigenvalue kept when taking matrix square roots.
const EIG_FLOOR: f64 = 1e-10;

/// Sections spanning fewer cells than this exhaust the grid.
const MIN_SECTION_CELLS: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub constants: BoundConstants,
    pub k_max: usize,
    /// Each solve grid spans this many cells across the current domain.
    pub min_cells: usize,
    /// Relative slack on B₁ ⊆ D_k ⊆ B₂ and on the other two-sided checks.
    pub inclusion_tol: f64,
    /// Points in the log-spaced q grid for the modulus of f.
    pub modulus_points: usize,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            constants: BoundConstants::default(),
            k_max: 6,
            min_cells: 64,
            inclusion_tol: 0.05,
            modulus_points: 24,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.solver.validate()?;
        if self.k_max == 0 {
            return Err(Error::Domain("k_max must be at least 1".into()));
        }
        if self.min_cells < 16 {
            return Err(Error::Domain(format!("min_cells = {} is below 16", self.min_cells)));
        }
        if !(self.inclusion_tol >= 0.0) || self.modulus_points < 2 {
            return Err(Error::Domain("inclusion tolerance and modulus grid must be positive".into()));
        }
        Ok(())
    }

    /// M_k = exp(1.12 Ĉ₅/h_c Σ_{j ≤ k−2} δ_j), so M₀ = M₁ = 1.
    pub fn compound(&self, deltas: &[f64], k: usize) -> f64 {
        let c = &self.constants;
        let sum: f64 = deltas.iter().take(k.saturating_sub(1)).sum();
        (1.12 * c.c5 / c.h_c * sum).exp()
    }
}

pub(crate) fn to_arr(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

pub(crate) fn from_arr(a: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1])
}

/// Operator norm.
pub(crate) fn op_norm(m: &Matrix2<f64>) -> f64 {
    m.singular_values().max()
}

fn sqrt_spd(h: &Matrix2<f64>) -> Matrix2<f64> {
    let e = SymmetricEigen::new((h + h.transpose()) * 0.5);
    if e.eigenvalues.min() < EIG_FLOOR {
        log::warn!("Hessian eigenvalue {:.3e} clamped to {EIG_FLOOR:e}; resolution may be exhausted", e.eigenvalues.min());
    }
    let root = e.eigenvalues.map(|l| l.max(EIG_FLOOR).sqrt());
    e.eigenvectors * Matrix2::from_diagonal(&root) * e.eigenvectors.transpose()
}

/// T = h^{-1/2} (H / det^{1/2}H)^{1/2}, so that det T = 1/h exactly.
pub fn step_transform(hessian: &Matrix2<f64>, h: f64) -> Result<AffineMap> {
    let r = sqrt_spd(hessian);
    let r = r / r.determinant().sqrt();
    AffineMap::from_2x2(to_arr(&(r / h.sqrt())), [0.0, 0.0])
}

/// Grid with spacing diam/cells over the polygon, with the origin as a node.
pub fn solve_grid(poly: &ConvexPolytope, cells: usize) -> Result<Grid> {
    let (lo, hi) = poly.bbox_2d();
    Grid::aligned(lo, hi, poly.diameter() / cells as f64, [0.0, 0.0])
}

/// Measured outcomes of one perturbation step.
#[derive(Clone, Debug, Serialize)]
pub struct StepDiagnostics {
    /// D²w(0) before the unit-determinant projection, and its determinant.
    pub hessian: [[f64; 2]; 2],
    pub hessian_det: f64,
    /// sup|u − w| against ½n²δ.
    pub vw_sn: f64,
    pub vw_sn_bound: f64,
    pub vw_sn_ok: bool,
    /// |Dw(0)|, and |Dw(0)|/δ^{1/2} when δ > 0.
    pub gradient: f64,
    pub gradient_ratio: Option<f64>,
    pub gradient_ok: bool,
    /// B_{r−} ⊆ T·S(u,h) ⊆ B_{r+} about the origin.
    pub r_minus: f64,
    pub r_plus: f64,
    /// max |½r±² − 1|.
    pub nd_excess: f64,
    pub det_root: f64,
    pub norm_inv: f64,
    /// Diameter of S(u,h) in solve-grid cells.
    pub section_cells: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub t: AffineMap,
    /// T·S(u, h).
    pub next_domain: ConvexPolytope,
    /// Sol of the current domain.
    pub w: ScalarField,
    pub diagnostics: StepDiagnostics,
}

/// One perturbation step on a quasi-normalized domain: with w = Sol(domain), returns
/// T = h^{-1/2}√(D²w(0)) and the image T·S(u, h) of the section of u at the origin.
///
/// `u` is re-tilted by its supporting plane at the origin. Pass `w` to reuse a solve.
pub fn perturbation_step(
    u: &ScalarField,
    w: Option<&ScalarField>,
    domain: &ConvexPolytope,
    xi: [f64; 2],
    h: f64,
    delta: f64,
    cfg: &ChainConfig,
) -> Result<StepOutcome> {
    let c = &cfg.constants;
    let n = c.n as f64;
    let slack = 1.0 + cfg.inclusion_tol;
    let reject = |which: String| Err(Error::StepRejected { which });
    if !(h > 0.0) || h > c.h_c * (1.0 + 1e-12) {
        return reject(format!("h = {h} outside (0, h_c = {}]", c.h_c));
    }
    if !(delta >= 0.0) || delta > 1.0 / (5.0 * n * n) {
        return reject(format!("δ = {delta:.3e} exceeds 1/(5n²)"));
    }
    if delta > c.c4 * h {
        return reject(format!("δ = {delta:.3e} exceeds C₄h = {:.3e}", c.c4 * h));
    }
    let (r_in, r_out) = (domain.inradius_about(xi), domain.circumradius_about(&xi));
    if r_in * slack < 1.0 || r_out > n * slack {
        return reject(format!("B₁(ξ) ⊆ D ⊆ B_n(ξ) fails: radii {r_in:.4}, {r_out:.4}"));
    }
    let owned;
    let w = match w {
        Some(w) => w,
        None => {
            owned = solve_unit_on(&Domain::polygon(domain.clone())?, u.grid(), &cfg.solver)?.0;
            &owned
        }
    };
    let origin = [0.0, 0.0];
    let hess = w.hessian_at(origin, 2)?;
    let t = step_transform(&hess, h)?;
    let dw = w.gradient_at(origin, 2)?;
    let gradient = dw[0].hypot(dw[1]);
    let vw_sn = u.max_abs_diff(w)?;
    let vw_sn_bound = 0.5 * n * n * delta;
    let gradient_ratio = (delta > 0.0).then(|| gradient / delta.sqrt());
    let grad_floor = 0.05 * u.grid().spacing;
    let section = extract_section(u, origin, h)?;
    let next_domain = section.boundary.transform(&t)?;
    let (r_minus, r_plus) = (next_domain.inradius_about(origin), next_domain.circumradius_about(&origin));
    let nd_excess = (0.5 * r_minus * r_minus - 1.0).abs().max((0.5 * r_plus * r_plus - 1.0).abs());
    let diagnostics = StepDiagnostics {
        hessian: to_arr(&hess),
        hessian_det: hess.determinant(),
        vw_sn,
        vw_sn_bound,
        vw_sn_ok: vw_sn <= vw_sn_bound + SUP_NOISE,
        gradient,
        gradient_ratio,
        gradient_ok: gradient <= c.kappa * delta.sqrt() + grad_floor,
        r_minus,
        r_plus,
        nd_excess,
        det_root: t.det_root(),
        norm_inv: t.norm_inv(),
        section_cells: section.diameter() / u.grid().spacing,
    };
    Ok(StepOutcome { t, next_domain, w: w.clone(), diagnostics })
}

/// Pass/fail outcome of each per-step check; `None` where the check does not apply.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepChecks {
    /// B₁ ⊆ D_k ⊆ B₂ within tolerance (k ≥ 1).
    pub inclusion: Option<bool>,
    /// det^{1/n}P_{k+1} = h_c^{−(k+1)/2} within 1e−6.
    pub det_identity: bool,
    /// ‖T_k⁻¹‖ ≤ (6/5)√h_c (k ≥ 1).
    pub norm_inv_t: Option<bool>,
    pub vw_sn: bool,
    pub gradest: bool,
    /// ‖P̆_k‖² ≤ Ĉ₂M_k and ‖P̆_k⁻¹‖² ≤ ĉ₂⁻¹M_k (k ≥ 1).
    pub compound: Option<bool>,
    /// |D²(w_{k+1} − w_k)(0)| ≤ Ĉ₂(M_{k+2} − M_{k+1}) up to the noise band.
    pub increment: Option<bool>,
    /// δ_k ≤ min{ω(2‖τ⁻¹P_k⁻¹‖), C_mc}.
    pub dk_bound: bool,
    /// |D²ŵ_{k+1}(0) − I| ≤ Ĉ₅δ_k/h_c up to the noise band.
    pub d2_next: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainStep {
    pub k: usize,
    /// h_c^k, or the first-section height mapped to U₀ for k = 0.
    pub height: f64,
    pub p: AffineMap,
    pub t: AffineMap,
    /// D²ŵ_k(0) with ŵ_k = Sol(D_k).
    pub hessian: [[f64; 2]; 2],
    pub hessian_det: f64,
    /// D²w_k(0) in the coordinates of U₀.
    pub hessian_v: [[f64; 2]; 2],
    pub delta: f64,
    pub m: f64,
    pub ecc: f64,
    pub norm_p: f64,
    pub norm_inv_p: f64,
    /// Inclusion radii of D_k about its center (ξ for k = 0, else 0).
    pub r_in: f64,
    pub r_out: f64,
    pub next_r_in: f64,
    pub next_r_out: f64,
    pub nd_excess: f64,
    pub det_t_root: f64,
    pub det_p_next_root: f64,
    pub det_error: f64,
    pub norm_inv_t: f64,
    pub vw_sn: f64,
    pub gradient: f64,
    pub gradient_ratio: Option<f64>,
    /// Diameter of τ⁻¹P_k⁻¹D_k in original coordinates.
    pub diameter: f64,
    pub spacing: f64,
    pub section_cells: f64,
    pub dk_bound: f64,
    pub increment: Option<f64>,
    pub increment_bound: Option<f64>,
    pub d2_next: Option<f64>,
    pub c5_ratio: Option<f64>,
    pub checks: StepChecks,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum Termination {
    MaxSteps,
    Resolution(String),
    Rejected(String),
    Failed(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct SectionChain {
    pub x: [f64; 2],
    /// b = f(x).
    pub b: f64,
    pub rho: f64,
    pub q_in: f64,
    pub f_max: f64,
    pub modulus: Modulus,
    pub h_first: f64,
    /// τz = A(z − x) with A the linear part of the first-section normalizer.
    pub tau: AffineMap,
    /// Center of the normalized first section, τ(c).
    pub xi: [f64; 2],
    pub first: SectionDiagnostics,
    pub steps: Vec<ChainStep>,
    pub termination: Termination,
    pub config: ChainConfig,
    /// ŵ_k = Sol(D_k) on its solve grid.
    #[serde(skip)]
    pub unit_solutions: Vec<ScalarField>,
    /// D_k = P_k τ S(v, h_first, x) reached by the chain.
    #[serde(skip)]
    pub domains: Vec<ConvexPolytope>,
}

impl SectionChain {
    pub fn deltas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.delta).collect()
    }

    /// M_k for k = 0..=K+1, as far as the recorded δ's determine them.
    pub fn compounds(&self) -> Vec<f64> {
        let d = self.deltas();
        (0..=d.len() + 1).map(|k| self.config.compound(&d, k)).collect()
    }

    /// L_k = P_k∘τ, sending the k-th section in original coordinates to D_k.
    pub fn pullback(&self, k: usize) -> AffineMap {
        self.steps[k].p.compose(&self.tau)
    }

    /// 𝓔₀ = exp(β ∫₀^{q_in} ω dq/q) of the sampled modulus; infinite when ω is not Dini.
    pub fn e_zero(&self) -> Result<f64> {
        Ok((self.config.constants.beta * dini_integral(&self.modulus, 0.0, self.q_in, 1)?).exp())
    }

    /// Largest M_k / 𝓔₀ over the recorded steps, to compare with Ĉ.
    pub fn compound_ratio(&self) -> Result<f64> {
        let e0 = self.e_zero()?;
        Ok(self.steps.iter().map(|s| s.m / e0).fold(0.0, f64::max))
    }

    /// All accepted steps passed all applicable checks.
    pub fn all_checks_pass(&self) -> bool {
        self.steps.iter().all(|s| {
            let c = &s.checks;
            c.det_identity
                && c.vw_sn
                && c.gradest
                && c.dk_bound
                && [c.inclusion, c.norm_inv_t, c.compound, c.increment, c.d2_next].iter().all(|o| o.unwrap_or(true))
        })
    }
}

fn f_samples(v: &ScalarField, f: Fun, x: [f64; 2], rho: f64) -> Result<ScalarField> {
    let h = v.grid().spacing;
    let g = Grid::aligned([x[0] - rho, x[1] - rho], [x[0] + rho, x[1] + rho], h, x)?;
    let mut values = vec![f64::NAN; g.len()];
    let mut valid = vec![false; g.len()];
    for k in 0..g.len() {
        let p = g.node_at(k);
        if dist2(p, x) <= rho && v.interpolate(p, Interp::Bilinear).is_some() {
            values[k] = f(p);
            valid[k] = true;
        }
    }
    if valid.iter().filter(|&&b| b).count() < 2 {
        return Err(Error::Resolution(format!("fewer than two grid nodes within B_{rho}(x)")));
    }
    ScalarField::new(g, values, valid)
}

/// Runs the section iteration at x: chooses q_in from the measured modulus of f on B_ρ(x),
/// normalizes the first section by τ, then solves on each D_k, steps with h = h_c and
/// accumulates P_{k+1} = T_k P_k.
pub fn run_chain(v: &ScalarField, f: Fun, x: [f64; 2], rho: f64, cfg: &ChainConfig) -> Result<SectionChain> {
    cfg.validate()?;
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("ρ must be positive, got {rho}")));
    }
    let c = &cfg.constants;
    let b = f(x);
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("f(x) = {b} is not positive")));
    }
    let samples = f_samples(v, f, x, rho)?;
    let q_grid = log_grid(v.grid().spacing, 2.0 * rho, cfg.modulus_points);
    let modulus = estimate_modulus_about(&samples, &q_grid, cfg.seed, x, b)?;
    let q_in = choose_q_in(&modulus, rho, c.c_mc)?;
    let (f_lo, f_hi) = (samples.min().expect("samples").0, samples.max().expect("samples").0);
    let constant_f = f_lo == f_hi;
    let f_max = f_hi / f_lo.min(b);

    let h_first = first_section_height(v, x, q_in)?;
    let s0 = extract_section(v, x, h_first)?;
    let (normalizer, first) = normalize_section(&s0, f_max, cfg.inclusion_tol)?;
    let tau = AffineMap::from_2x2(normalizer.matrix_2x2(), x)?;
    let shift = normalizer.apply2(x);
    let xi = [-shift[0], -shift[1]];
    let mut domain = s0.boundary.transform(&tau)?;

    let mut chain = SectionChain {
        x,
        b,
        rho,
        q_in,
        f_max,
        modulus,
        h_first,
        tau,
        xi,
        first,
        steps: Vec::new(),
        termination: Termination::MaxSteps,
        config: cfg.clone(),
        unit_solutions: Vec::new(),
        domains: Vec::new(),
    };
    let mut p = AffineMap::identity(2);
    let mut deltas: Vec<f64> = Vec::new();
    for k in 0..cfg.k_max {
        let l = p.compose(&chain.tau);
        let l_inv = l.inverse();
        if l_inv.norm() < 1e-12 {
            chain.termination = Termination::Resolution(format!("‖τ⁻¹P_{k}⁻¹‖ underflows"));
            break;
        }
        let center = if k == 0 { xi } else { [0.0, 0.0] };
        let grid = solve_grid(&domain, cfg.min_cells)?;
        let dom = Domain::polygon(domain.clone())?;
        let phi = |y: [f64; 2]| f(l_inv.apply2(y)) / b;
        let delta = (0..grid.len())
            .map(|i| grid.node_at(i))
            .filter(|&y| dom.contains(y))
            .chain(domain.vertices_2d())
            .map(|y| (phi(y) - 1.0).abs())
            .fold(0.0, f64::max);
        let solved = solve_unit_on(&dom, &grid, &cfg.solver).and_then(|(w, _)| {
            let u = if constant_f { w.clone() } else { solve_on(&dom, &grid, &phi, &|_| 0.0, &cfg.solver)?.0 };
            Ok((w, u))
        });
        let (w, u) = match solved {
            Ok(pair) => pair,
            Err(e) => {
                chain.termination = Termination::Failed(format!("step {k}: {e}"));
                break;
            }
        };
        let height = if k == 0 { -u.interpolate([0.0, 0.0], Interp::Biquadratic).unwrap_or(f64::NAN) } else { c.h_c.powi(k as i32) };
        let out = match perturbation_step(&u, Some(&w), &domain, center, c.h_c, delta, cfg) {
            Ok(o) => o,
            Err(Error::StepRejected { which }) => {
                chain.termination = Termination::Rejected(format!("step {k}: {which}"));
                break;
            }
            Err(e) => {
                chain.termination = Termination::Failed(format!("step {k}: {e}"));
                break;
            }
        };
        deltas.push(delta);
        let d = &out.diagnostics;
        let p_next = out.t.compose(&p);
        let det_p_next_root = p_next.det_root();
        let det_error = (det_p_next_root * c.h_c.powf(0.5 * (k + 1) as f64) - 1.0).abs();
        let hess = from_arr(d.hessian);
        let pm = from_arr(p.matrix_2x2());
        let hessian_v = pm.transpose() * hess * pm / pm.determinant().abs();
        let ps = p.stats();
        let m = cfg.compound(&deltas, k);
        let reach = 2.0 * (1.0 + cfg.inclusion_tol) * l_inv.norm();
        let dk_bound = chain.modulus.eval_upper(reach).min(c.c_mc);
        let inclusion = (k >= 1).then(|| {
            d.r_minus.is_finite()
                && domain.inradius_about(center) * (1.0 + cfg.inclusion_tol) >= 1.0
                && domain.circumradius_about(&center) <= 2.0 * (1.0 + cfg.inclusion_tol)
        });
        let norm_inv_t_ok = (k >= 1).then(|| d.norm_inv <= 1.2 * c.h_c.sqrt() * (1.0 + 1e-9));
        let compound = (k >= 1).then(|| {
            ps.norm * ps.norm <= c.c2_hi * m * (1.0 + HESSIAN_NOISE) && ps.norm_inv * ps.norm_inv <= m / c.c2_lo * (1.0 + HESSIAN_NOISE)
        });
        let section_in_x = domain.transform(&l_inv)?;
        let step = ChainStep {
            k,
            height,
            p: p.clone(),
            t: out.t.clone(),
            hessian: d.hessian,
            hessian_det: d.hessian_det,
            hessian_v: to_arr(&hessian_v),
            delta,
            m,
            ecc: ps.ecc,
            norm_p: ps.norm,
            norm_inv_p: ps.norm_inv,
            r_in: domain.inradius_about(center),
            r_out: domain.circumradius_about(&center),
            next_r_in: d.r_minus,
            next_r_out: d.r_plus,
            nd_excess: d.nd_excess,
            det_t_root: d.det_root,
            det_p_next_root,
            det_error,
            norm_inv_t: d.norm_inv,
            vw_sn: d.vw_sn,
            gradient: d.gradient,
            gradient_ratio: d.gradient_ratio,
            diameter: section_in_x.diameter(),
            spacing: grid.spacing,
            section_cells: d.section_cells,
            dk_bound,
            increment: None,
            increment_bound: None,
            d2_next: None,
            c5_ratio: None,
            checks: StepChecks {
                inclusion,
                det_identity: det_error <= 1e-6,
                norm_inv_t: norm_inv_t_ok,
                vw_sn: d.vw_sn_ok,
                gradest: d.gradient_ok,
                compound,
                increment: None,
                dk_bound: delta <= dk_bound * (1.0 + cfg.inclusion_tol) + 1e-12,
                d2_next: None,
            },
        };
        log::info!("chain step {k}: δ = {delta:.3e}, M = {m:.4}, radii {:.4}/{:.4}", step.r_in, step.r_out);
        let cells = d.section_cells;
        chain.steps.push(step);
        chain.unit_solutions.push(w);
        chain.domains.push(domain);
        p = p_next;
        domain = out.next_domain;
        if cells < MIN_SECTION_CELLS {
            chain.termination = Termination::Resolution(format!("section at step {k} spans {cells:.1} cells"));
            break;
        }
    }
    fill_cross_step(&mut chain);
    Ok(chain)
}

/// Checks that relate step k to step k+1.
fn fill_cross_step(chain: &mut SectionChain) {
    let cfg = chain.config.clone();
    let h_c = cfg.constants.h_c;
    let deltas = chain.deltas();
    for k in 0..chain.steps.len().saturating_sub(1) {
        let (next_h, next_v) = (from_arr(chain.steps[k + 1].hessian), from_arr(chain.steps[k + 1].hessian_v));
        let cur_v = from_arr(chain.steps[k].hessian_v);
        let s = &mut chain.steps[k];
        let d2 = op_norm(&(next_h - Matrix2::identity()));
        s.d2_next = Some(d2);
        s.c5_ratio = (s.delta > 0.0).then(|| d2 / (s.delta / h_c));
        s.checks.d2_next = Some(d2 <= cfg.constants.c5 * s.delta / h_c + HESSIAN_NOISE);
        let inc = op_norm(&(next_v - cur_v));
        let bound = cfg.constants.c2_hi * (cfg.compound(&deltas, k + 2) - cfg.compound(&deltas, k + 1));
        s.increment = Some(inc);
        s.increment_bound = Some(bound);
        s.checks.increment = Some(inc <= bound + HESSIAN_NOISE * op_norm(&cur_v));
    }
}

/// Hessian recovered from a chain, with its convergence record.
#[derive(Clone, Debug, Serialize)]
pub struct HessianLimit {
    /// b·det(L_K)⁻¹ L_Kᵀ D²ŵ_K(0) L_K for the last step K.
    pub hessian: [[f64; 2]; 2],
    pub fd_hessian: [[f64; 2]; 2],
    pub pulled: Vec<[[f64; 2]; 2]>,
    /// |pulled_k − FD D²v(x)|.
    pub error_trace: Vec<f64>,
    /// |pulled_{k+1} − pulled_k|.
    pub increments: Vec<f64>,
    /// |FD D²v(x) at step 2 − at step 1|, the noise allowance of the trace.
    pub fd_noise: f64,
    /// Trace nonincreasing after step 1 within 10% plus the FD noise.
    pub trace_ok: bool,
    /// |D²V(0)| / M_K against Ĉ₂.
    pub c2_ratio: f64,
    pub c2_ok: bool,
}

fn pulled_hessian(chain: &SectionChain, k: usize) -> Matrix2<f64> {
    let l = from_arr(chain.pullback(k).matrix_2x2());
    chain.b * l.transpose() * from_arr(chain.steps[k].hessian) * l / l.determinant().abs()
}

/// Pulls each D²ŵ_k(0) back through P_k and τ and compares with the finite-difference D²v(x).
pub fn hessian_limit(chain: &SectionChain, v: &ScalarField, x: [f64; 2]) -> Result<HessianLimit> {
    let k_n = chain.steps.len();
    if k_n < 3 {
        return Err(Error::Precondition(format!("Hessian recovery needs at least 3 chain steps, got {k_n}")));
    }
    let fd = v.hessian_at(x, 2)?;
    let pulled: Vec<Matrix2<f64>> = (0..k_n).map(|k| pulled_hessian(chain, k)).collect();
    let error_trace: Vec<f64> = pulled.iter().map(|p| op_norm(&(p - fd))).collect();
    let increments: Vec<f64> = pulled.windows(2).map(|w| op_norm(&(w[1] - w[0]))).collect();
    let last = pulled[k_n - 1];
    let floor = DIVERGENCE_FLOOR * op_norm(&last);
    if increments.len() >= 3 {
        let tail = &increments[increments.len() - 3..];
        let ratio = (tail[1] / tail[0] + tail[2] / tail[1]) / 2.0;
        if ratio >= 0.8 && tail[2] > floor {
            return Err(Error::Divergence(format!("Hessian increments stall: mean ratio {ratio:.3}, last increment {:.3e}", tail[2])));
        }
    }
    let fd_noise = op_norm(&(fd - v.hessian_at(x, 1)?));
    let trace_ok = error_trace.windows(2).skip(1).all(|w| w[1] <= 1.1 * w[0] + fd_noise);
    let m_last = *chain.compounds().last().expect("nonempty");
    let c2_ratio = op_norm(&from_arr(chain.steps[k_n - 1].hessian_v)) / m_last;
    Ok(HessianLimit {
        hessian: to_arr(&last),
        fd_hessian: to_arr(&fd),
        pulled: pulled.iter().map(to_arr).collect(),
        error_trace,
        increments,
        trace_ok,
        fd_noise,
        c2_ratio,
        c2_ok: c2_ratio <= chain.config.constants.c2_hi,
    })
}

/// w_v on the k-th section in original coordinates, with its closeness to v.
#[derive(Clone, Debug, Serialize)]
pub struct BackwardTransform {
    #[serde(skip)]
    pub field: ScalarField,
    pub k: usize,
    /// ½ osc(v − b·w_v) over the section.
    pub epsilon: f64,
    /// |Dv(x) − b Dw_v(x)|.
    pub gradient_gap: f64,
    pub hessian_fd: [[f64; 2]; 2],
    pub hessian_pullback: [[f64; 2]; 2],
    pub v_hessian: [[f64; 2]; 2],
    /// |b D²w_v(x) − D²v(x)| / |D²v(x)|.
    pub rel_gap: f64,
    /// Eigenvalue range of D²w_v(x) and max{λ_max, 1/λ_min}.
    pub eigenvalues: (f64, f64),
    pub window: f64,
}

/// w_v(z) = det(L)⁻¹ ŵ_k(Lz) + b⁻¹Dv(x)·(z − x) with L = P_k∘τ.
pub fn backward_transform(chain: &SectionChain, k: usize, v: &ScalarField, x: [f64; 2]) -> Result<BackwardTransform> {
    if k >= chain.steps.len() || k >= chain.unit_solutions.len() {
        return Err(Error::Precondition(format!("chain has no step {k}")));
    }
    let l = chain.pullback(k);
    let l_inv = l.inverse();
    let region = chain.domains[k].transform(&l_inv)?;
    let (lo, hi) = region.bbox_2d();
    let target = Grid::aligned(lo, hi, region.diameter() / 64.0, x)?;
    let budget = ActionBudget { interp: Interp::Biquadratic, relative_error: 1e-2 };
    let lifted = group_action_with(&l_inv, &chain.unit_solutions[k], &target, budget)?;
    let (_, dv) = supporting_plane(v, x)?;
    let b = chain.b;
    let field = lifted.map(|z, s| s + (dv[0] * (z[0] - x[0]) + dv[1] * (z[1] - x[1])) / b);
    let (mut lo_d, mut hi_d) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, z, wv) in field.valid_nodes() {
        if let Some(vz) = v.interpolate(z, Interp::Biquadratic) {
            let d = vz - b * wv;
            lo_d = lo_d.min(d);
            hi_d = hi_d.max(d);
        }
    }
    if !lo_d.is_finite() {
        return Err(Error::Resolution("backward transform does not overlap v".into()));
    }
    let hw = field.hessian_at(x, 2)?;
    let gw = field.gradient_at(x, 2)?;
    let lm = from_arr(l.matrix_2x2());
    let pull = lm.transpose() * from_arr(chain.steps[k].hessian) * lm / lm.determinant().abs();
    let hv = v.hessian_at(x, 2)?;
    let rel_gap = op_norm(&(hw * b - hv)) / op_norm(&hv);
    let ev = SymmetricEigen::new(hw).eigenvalues;
    let (e_lo, e_hi) = (ev.min(), ev.max());
    Ok(BackwardTransform {
        field,
        k,
        epsilon: 0.5 * (hi_d - lo_d),
        gradient_gap: (dv[0] - b * gw[0]).hypot(dv[1] - b * gw[1]),
        hessian_fd: to_arr(&hw),
        hessian_pullback: to_arr(&pull),
        v_hessian: to_arr(&hv),
        rel_gap,
        eigenvalues: (e_lo, e_hi),
        window: e_hi.max(1.0 / e_lo),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(m: Matrix2<f64>, c: f64, n: usize) -> ScalarField {
        let g = Grid::covering([-1.2, -1.2], [1.2, 1.2], n).unwrap();
        ScalarField::from_fn(
            g,
            |p| 0.5 * (m[(0, 0)] * p[0] * p[0] + 2.0 * m[(0, 1)] * p[0] * p[1] + m[(1, 1)] * p[1] * p[1]) - c,
            |p| p[0].hypot(p[1]) <= 1.15,
        )
        .unwrap()
    }

    fn small_cfg(k_max: usize) -> ChainConfig {
        ChainConfig { k_max, min_cells: 48, ..Default::default() }
    }

    #[test]
    fn step_transform_has_exact_determinant() {
        let h = Matrix2::new(2.0, 0.3, 0.3, 0.7);
        let t = step_transform(&h, 0.2).unwrap();
        assert!((t.det() - 5.0).abs() < 1e-10 * 5.0);
        let m = from_arr(t.matrix_2x2());
        assert!((m - m.transpose()).norm() < 1e-12);
    }

    #[test]
    fn anisotropic_quadratic_recovers_root_of_hessian() {
        let (a, h): (f64, f64) = (1.5, 0.2);
        let m = Matrix2::new(a, 0.0, 0.0, 1.0 / a);
        let poly = ConvexPolytope::ellipse([0.0, 0.0], (2.0 / a).sqrt(), (2.0 * a).sqrt(), 0.0, 256).unwrap();
        let grid = solve_grid(&poly, 64).unwrap();
        let u = ScalarField::from_fn(grid, |p| 0.5 * (a * p[0] * p[0] + p[1] * p[1] / a) - 1.0, |p| poly.contains_2d(p, 0.0)).unwrap();
        let cfg = ChainConfig::default();
        let expect = sqrt_spd(&m) / h.sqrt();
        let exact = perturbation_step(&u, Some(&u), &poly, [0.0, 0.0], h, 0.0, &cfg).unwrap();
        assert!((from_arr(exact.t.matrix_2x2()) - expect).norm() < 1e-8);
        assert!(exact.diagnostics.nd_excess < 0.02, "{:?}", exact.diagnostics);
        let solved = perturbation_step(&u, None, &poly, [0.0, 0.0], h, 0.0, &cfg).unwrap();
        let rel = (from_arr(solved.t.matrix_2x2()) - expect).norm() / expect.norm();
        assert!(rel < 1e-2, "relative error {rel}");
        assert!(solved.diagnostics.vw_sn < 1e-2);
    }

    #[test]
    fn step_rejects_large_oscillation_and_bad_domains() {
        let poly = ConvexPolytope::regular(64, [0.0, 0.0], 1.4, 0.0).unwrap();
        let grid = solve_grid(&poly, 32).unwrap();
        let u = ScalarField::from_fn(grid, |p| 0.5 * (p[0] * p[0] + p[1] * p[1]) - 0.98, |p| poly.contains_2d(p, 0.0)).unwrap();
        let cfg = ChainConfig::default();
        let err = perturbation_step(&u, Some(&u), &poly, [0.0, 0.0], 0.2, 0.08, &cfg).unwrap_err();
        assert!(matches!(err, Error::StepRejected { .. }));
        let err = perturbation_step(&u, Some(&u), &poly, [0.0, 0.0], 0.3, 0.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::StepRejected { .. }));
        let err = perturbation_step(&u, Some(&u), &poly, [0.5, 0.0], 0.2, 0.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::StepRejected { .. }));
    }

    #[test]
    fn constant_rhs_chain_on_quadratic() {
        let m = Matrix2::new(1.0, 0.0, 0.0, 1.0);
        let v = quadratic(m, 0.5, 97);
        let one = |_: [f64; 2]| 1.0;
        let cfg = small_cfg(5);
        let chain = run_chain(&v, &one, [0.0, 0.0], 0.4, &cfg).unwrap();
        assert_eq!(chain.termination, Termination::MaxSteps, "{:?}", chain.termination);
        assert_eq!(chain.steps.len(), 5);
        for s in &chain.steps {
            assert_eq!(s.delta, 0.0);
            assert_eq!(s.m, 1.0);
            assert!(s.det_error <= 1e-6);
            assert!((s.det_t_root * 0.2f64.sqrt() - 1.0).abs() < 1e-8);
        }
        assert!(chain.all_checks_pass(), "{:#?}", chain.steps.iter().map(|s| &s.checks).collect::<Vec<_>>());
        let diam: Vec<f64> = chain.steps.iter().map(|s| s.diameter).collect();
        assert!(diam.windows(2).all(|w| w[1] < w[0]));

        let lim = hessian_limit(&chain, &v, [0.0, 0.0]).unwrap();
        for p in &lim.pulled {
            assert!(op_norm(&(from_arr(*p) - m)) < 2e-2, "{p:?}");
        }
        let back = backward_transform(&chain, 1, &v, [0.0, 0.0]).unwrap();
        assert!(back.epsilon < 1e-4, "ε = {}", back.epsilon);
        assert!(back.rel_gap < 2e-2);
    }

    #[test]
    fn anisotropic_start_is_straightened() {
        let m = Matrix2::new(4.0, 1.0, 1.0, 0.5);
        let v = quadratic(m, 0.2, 97);
        let one = |_: [f64; 2]| 1.0;
        let chain = run_chain(&v, &one, [0.0, 0.0], 0.3, &small_cfg(3)).unwrap();
        assert_eq!(chain.steps.len(), 3);
        let lim = hessian_limit(&chain, &v, [0.0, 0.0]).unwrap();
        let rel = op_norm(&(from_arr(lim.hessian) - m)) / op_norm(&m);
        assert!(rel < 2e-2, "relative error {rel}");
        for s in &chain.steps[1..] {
            assert!(op_norm(&(from_arr(s.hessian) - Matrix2::identity())) < 5e-2);
        }
    }

    #[test]
    fn hessian_limit_needs_three_steps() {
        let v = quadratic(Matrix2::identity(), 0.5, 65);
        let one = |_: [f64; 2]| 1.0;
        let chain = run_chain(&v, &one, [0.0, 0.0], 0.4, &small_cfg(2)).unwrap();
        assert!(matches!(hessian_limit(&chain, &v, [0.0, 0.0]), Err(Error::Precondition(_))));
    }

    #[test]
    fn compound_factor_indexing() {
        let cfg = ChainConfig::default();
        let d = [0.01, 0.02, 0.03];
        assert_eq!(cfg.compound(&d, 0), 1.0);
        assert_eq!(cfg.compound(&d, 1), 1.0);
        let c = 1.12 * cfg.constants.c5 / cfg.constants.h_c;
        assert!((cfg.compound(&d, 3) - (c * 0.03).exp()).abs() < 1e-14);
    }
}
