//! End-to-end experiments: right-hand-side families, Hölder seminorms, the power-law sweep,
//! mollification of rough data and the discontinuous-f pipeline.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{gamma_range, holder_corollary, log_grid, BoundConstants, ClosedForm, GammaRange, Modulus, RANDOM_PAIRS};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{Grid, ScalarField};
use crate::geometry::{normalize_domain, ConvexPolytope};
use crate::io::{LinePlot, Series};
use crate::iteration::{perturbation_step, solve_grid, ChainConfig};
use crate::solver::{grid_for, solve_on, solve_unit_on, Domain, SolverConfig};

type Fun<'a> = &'a (dyn Fn([f64; 2]) -> f64 + Sync);

/// Owned right-hand-side sampler.
pub type Sampler = Box<dyn Fn([f64; 2]) -> f64 + Sync + Send>;

/// Right-hand side families, all with f ≥ 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Family {
    /// f ≡ c.
    Constant {
        c: f64,
    },
    /// f = 1 + H|x − x₀|^α.
    Holder {
        h: f64,
        alpha: f64,
        center: [f64; 2],
    },
    /// f = 1 + jump on {n·x > offset}.
    Step {
        jump: f64,
        normal: [f64; 2],
        offset: f64,
    },
    /// f = 1 + s|ln min(|x|, 1/e)|^{−a}, with f(0) = 1.
    Radial {
        s: f64,
        a: f64,
    },
    Custom {
        expr: String,
    },
}

impl Family {
    /// Parses `constant:C`, `holder:H,α[,x₀,y₀]`, `step:J[,n₁,n₂,offset]`, `radial:s,a`,
    /// or falls back to an expression in x and y.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let Some((head, rest)) = text.split_once(':') else {
            Expr::parse(text)?;
            return Ok(Family::Custom { expr: text.to_string() });
        };
        let offset = head.len() + 1;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Parse { pos: offset, msg: format!("bad number {s:?} in {head} family") }))
            .collect::<Result<_>>()?;
        let want = |ok: bool, usage: &str| if ok { Ok(()) } else { Err(Error::Parse { pos: offset, msg: format!("usage: {usage}") }) };
        let fam = match head.trim() {
            "constant" => {
                want(nums.len() == 1, "constant:C")?;
                Family::Constant { c: nums[0] }
            }
            "holder" => {
                want(nums.len() == 2 || nums.len() == 4, "holder:H,alpha[,x0,y0]")?;
                let center = if nums.len() == 4 { [nums[2], nums[3]] } else { [0.0, 0.0] };
                Family::Holder { h: nums[0], alpha: nums[1], center }
            }
            "step" => {
                want(nums.len() == 1 || nums.len() == 4, "step:jump[,n1,n2,offset]")?;
                let (normal, off) = if nums.len() == 4 { ([nums[1], nums[2]], nums[3]) } else { ([1.0, 0.0], 0.0) };
                Family::Step { jump: nums[0], normal, offset: off }
            }
            "radial" => {
                want(nums.len() == 2, "radial:s,a")?;
                Family::Radial { s: nums[0], a: nums[1] }
            }
            other => return Err(Error::Parse { pos: 0, msg: format!("unknown family {other:?}") }),
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Family::Constant { c } => *c >= 1.0 && c.is_finite(),
            Family::Holder { h, alpha, .. } => *h >= 0.0 && *alpha > 0.0 && *alpha <= 1.0,
            Family::Step { jump, normal, .. } => *jump >= 0.0 && normal[0].hypot(normal[1]) > 0.0,
            Family::Radial { s, a } => *s >= 0.0 && *a > 0.0,
            Family::Custom { expr } => Expr::parse(expr).is_ok(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid right-hand side family {self:?}")))
        }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match self.clone() {
            Family::Constant { c } => Box::new(move |_| c),
            Family::Holder { h, alpha, center } => Box::new(move |p| 1.0 + h * (p[0] - center[0]).hypot(p[1] - center[1]).powf(alpha)),
            Family::Step { jump, normal, offset } => {
                Box::new(move |p| if normal[0] * p[0] + normal[1] * p[1] > offset { 1.0 + jump } else { 1.0 })
            }
            Family::Radial { s, a } => Box::new(move |p| {
                let r = p[0].hypot(p[1]).min((-1.0f64).exp());
                if r == 0.0 {
                    1.0
                } else {
                    1.0 + s * (-r.ln()).powf(-a)
                }
            }),
            Family::Custom { expr } => {
                let e = Expr::parse(&expr)?;
                Box::new(move |p| e.eval(p))
            }
        })
    }

    /// Closed-form modulus of the family, when it has one.
    pub fn closed_form(&self) -> Option<ClosedForm> {
        match *self {
            Family::Constant { .. } => Some(ClosedForm::Constant { c: 0.0 }),
            Family::Holder { h, alpha, .. } => Some(ClosedForm::Holder { h, alpha }),
            Family::Step { jump, .. } => Some(ClosedForm::Constant { c: jump }),
            Family::Radial { s, a } => Some(ClosedForm::Log { s, a }),
            Family::Custom { .. } => None,
        }
    }
}

/// Domain description accepted by the experiment driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DomainSpec {
    Disk {
        r: f64,
    },
    Ellipse {
        a: f64,
        b: f64,
        angle: f64,
    },
    Square {
        half: f64,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
    /// Normalized random polygon from [`random_polygon`].
    Random {
        seed: u64,
    },
}

impl DomainSpec {
    /// Parses `disk[:r]`, `ellipse:a,b[,angle]`, `square[:half]`, `polygon:x,y;x,y;…` or `random:seed`.
    pub fn parse(text: &str) -> Result<Self> {
        let (head, rest) = text.trim().split_once(':').unwrap_or((text.trim(), ""));
        let pos = head.len() + 1;
        let nums = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Parse { pos, msg: format!("bad number {t:?}") }))
                .collect()
        };
        let spec = match head {
            "disk" => DomainSpec::Disk { r: nums(rest)?.first().copied().unwrap_or(1.0) },
            "square" => DomainSpec::Square { half: nums(rest)?.first().copied().unwrap_or(1.0) },
            "ellipse" => {
                let v = nums(rest)?;
                if v.len() < 2 {
                    return Err(Error::Parse { pos, msg: "usage: ellipse:a,b[,angle]".into() });
                }
                DomainSpec::Ellipse { a: v[0], b: v[1], angle: v.get(2).copied().unwrap_or(0.0) }
            }
            "polygon" => {
                let vertices = rest
                    .split(';')
                    .map(|pt| match nums(pt)?.as_slice() {
                        [x, y] => Ok([*x, *y]),
                        _ => Err(Error::Parse { pos, msg: format!("vertex {pt:?} needs two coordinates") }),
                    })
                    .collect::<Result<Vec<_>>>()?;
                DomainSpec::Polygon { vertices }
            }
            "random" => {
                let seed = rest.trim().parse().map_err(|_| Error::Parse { pos, msg: format!("bad seed {rest:?}") })?;
                DomainSpec::Random { seed }
            }
            other => return Err(Error::Parse { pos: 0, msg: format!("unknown domain {other:?}") }),
        };
        spec.build()?;
        Ok(spec)
    }

    pub fn build(&self) -> Result<Domain> {
        match self {
            DomainSpec::Disk { r } => Domain::disk([0.0, 0.0], *r),
            DomainSpec::Ellipse { a, b, angle } => Domain::ellipse([0.0, 0.0], [*a, *b], *angle),
            DomainSpec::Square { half } => {
                let h = *half;
                Domain::polygon(ConvexPolytope::from_points_2d(&[[-h, -h], [h, -h], [h, h], [-h, h]])?)
            }
            DomainSpec::Polygon { vertices } => Domain::polygon(ConvexPolytope::from_points_2d(vertices)?),
            DomainSpec::Random { seed } => Domain::polygon(random_polygon(*seed)?),
        }
    }
}

/// Random convex polygon (5 to 9 vertices), normalized so that B₁ ⊆ P ⊆ B₂.
pub fn random_polygon(seed: u64) -> Result<ConvexPolytope> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..10);
    let stretch = rng.random_range(1.0..1.6);
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let t = std::f64::consts::TAU * (k as f64 + rng.random_range(0.0..0.8)) / n as f64;
            let r = rng.random_range(0.6..1.4);
            [stretch * r * t.cos(), r * t.sin()]
        })
        .collect();
    Ok(normalize_domain(&ConvexPolytope::from_points_2d(&pts)?)?.1)
}

/// Inputs of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub domain: DomainSpec,
    pub f: Family,
    pub grid: usize,
    pub rho: f64,
    pub constants: BoundConstants,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<Domain> {
        if self.grid < 65 {
            return Err(Error::Domain(format!("grid resolution must be at least 65, got {}", self.grid)));
        }
        self.constants.validate()?;
        let domain = self.domain.build()?;
        let diam = domain.diameter();
        if !(self.rho > 0.0 && self.rho < 0.5 * diam) {
            return Err(Error::Domain(format!("ρ must lie in (0, {:.4}), got {}", 0.5 * diam, self.rho)));
        }
        self.rhs(&domain).map(drop)?;
        Ok(domain)
    }

    /// f scaled by s = 1/min(f_min, 1) so that f ≥ 1, as (s, sampler).
    ///
    /// f_min is taken over the solve grid nodes and boundary points at a quarter of the spacing.
    pub fn rhs(&self, domain: &Domain) -> Result<(f64, Sampler)> {
        let f = self.f.sampler()?;
        let grid = grid_for(domain, self.grid)?;
        let nodes = (0..grid.len()).map(|k| grid.node_at(k)).filter(|&p| domain.contains(p));
        let mut f_min = f64::INFINITY;
        for p in nodes.chain(domain.boundary_samples(grid.spacing / 4.0)) {
            let v = f(p);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Precondition(format!("f = {v} at ({:.4}, {:.4}); f must be positive and finite", p[0], p[1])));
            }
            f_min = f_min.min(v);
        }
        if f_min >= 1.0 {
            return Ok((1.0, f));
        }
        let s = 1.0 / f_min;
        Ok((s, Box::new(move |p| (s * f(p)).max(1.0))))
    }
}

/// Sampled pairs behind a seminorm value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCensus {
    pub spacing: f64,
    pub nodes: usize,
    pub near_pairs: usize,
    pub random_pairs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub d_lo: f64,
    pub d_hi: f64,
    pub pairs: usize,
    /// Pairs whose ratio is within [`ATTAINING_FRACTION`] of the seminorm.
    pub attaining: usize,
    pub max_ratio: f64,
}

pub const ATTAINING_FRACTION: f64 = 0.9;
const HISTOGRAM_BINS: usize = 12;
const NEAR_CELLS: isize = 4;

/// Sampled Hölder seminorm [Dˡv]_{α; Ω_ρ}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeminormRecord {
    pub order: u8,
    pub alpha: f64,
    pub rho: f64,
    pub value: f64,
    pub argmax: [[f64; 2]; 2],
    pub census: PairCensus,
    pub histogram: Vec<DistanceBin>,
}

fn derivative(v: &ScalarField, i: usize, j: usize, order: u8) -> Option<[f64; 3]> {
    if order == 1 {
        v.gradient_node(i, j, 1).map(|g| [g[0], g[1], 0.0])
    } else {
        v.hessian_node(i, j, 2).map(|h| [h[(0, 0)], h[(0, 1)], h[(1, 1)]])
    }
}

fn diff_norm(a: &[f64; 3], b: &[f64; 3], order: u8) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    if order == 1 {
        d[0].hypot(d[1])
    } else {
        // spectral norm of [[d0, d1], [d1, d2]]
        0.5 * (d[0] + d[2]).abs() + (0.25 * (d[0] - d[2]).powi(2) + d[1] * d[1]).sqrt()
    }
}

/// Nodes of Ω_ρ = {x ∈ Ω : dist(x, ∂Ω) > ρ} on the field's grid, with (i, j).
fn inner_nodes(v: &ScalarField, domain: &Domain, rho: f64) -> Vec<(usize, usize)> {
    let g = v.grid();
    v.valid_nodes().filter(|(_, p, _)| domain.contains(*p) && domain.boundary_distance(*p) > rho).map(|(k, _, _)| g.coords(k)).collect()
}

/// sup over sampled pairs in Ω_ρ of |Dˡv(x) − Dˡv(x′)| / |x − x′|^α.
///
/// Pairs are all grid pairs within four cells plus [`RANDOM_PAIRS`] seeded random pairs. Gradients use
/// one-cell and Hessians two-cell centered differences.
pub fn measure_holder(v: &ScalarField, domain: &Domain, rho: f64, order: u8, alpha: f64, seed: u64) -> Result<SeminormRecord> {
    if !(order == 1 || order == 2) {
        return Err(Error::Domain(format!("derivative order must be 1 or 2, got {order}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) || !(rho >= 0.0) {
        return Err(Error::Domain(format!("need α ∈ (0, 1] and ρ ≥ 0, got α = {alpha}, ρ = {rho}")));
    }
    let g = *v.grid();
    let nodes = inner_nodes(v, domain, rho);
    if nodes.is_empty() {
        return Err(Error::Domain(format!("Ω_ρ is empty for ρ = {rho}")));
    }
    let mut deriv: Vec<Option<[f64; 3]>> = vec![None; g.len()];
    for &(i, j) in &nodes {
        let d = derivative(v, i, j, order).ok_or_else(|| {
            let p = g.node(i, j);
            Error::Proximity(format!("order-{order} stencil leaves the valid region at ({:.4}, {:.4})", p[0], p[1]))
        })?;
        deriv[g.index(i, j)] = Some(d);
    }
    let h = g.spacing;
    let mut samples: Vec<(f64, f64, usize, usize)> = Vec::new();
    let mut census = PairCensus { spacing: h, nodes: nodes.len(), near_pairs: 0, random_pairs: 0, seed };
    for &(i, j) in &nodes {
        let a = g.index(i, j);
        let da = deriv[a].unwrap();
        for di in 0..=NEAR_CELLS {
            for dj in -NEAR_CELLS..=NEAR_CELLS {
                if di == 0 && dj <= 0 {
                    continue;
                }
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 || ni as usize >= g.nx || nj as usize >= g.ny {
                    continue;
                }
                let b = g.index(ni as usize, nj as usize);
                if let Some(db) = deriv[b] {
                    let d = h * ((di * di + dj * dj) as f64).sqrt();
                    samples.push((d, diff_norm(&da, &db, order) / d.powf(alpha), a, b));
                    census.near_pairs += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_PAIRS {
        let (ia, ja) = nodes[rng.random_range(0..nodes.len())];
        let (ib, jb) = nodes[rng.random_range(0..nodes.len())];
        census.random_pairs += 1;
        if (ia, ja) == (ib, jb) {
            continue;
        }
        let (a, b) = (g.index(ia, ja), g.index(ib, jb));
        let d = h * ((ia as f64 - ib as f64).powi(2) + (ja as f64 - jb as f64).powi(2)).sqrt();
        samples.push((d, diff_norm(&deriv[a].unwrap(), &deriv[b].unwrap(), order) / d.powf(alpha), a, b));
    }
    let (value, a, b) = samples.iter().fold((0.0, 0, 0), |m, s| if s.1 > m.0 { (s.1, s.2, s.3) } else { m });
    let d_max = samples.iter().map(|s| s.0).fold(h, f64::max);
    let edges = log_grid(h * (1.0 - 1e-9), d_max * (1.0 + 1e-9), HISTOGRAM_BINS + 1);
    let mut histogram: Vec<DistanceBin> =
        edges.windows(2).map(|w| DistanceBin { d_lo: w[0], d_hi: w[1], pairs: 0, attaining: 0, max_ratio: 0.0 }).collect();
    for &(d, r, _, _) in &samples {
        let k = edges.partition_point(|&e| e <= d).clamp(1, HISTOGRAM_BINS) - 1;
        let bin = &mut histogram[k];
        bin.pairs += 1;
        bin.max_ratio = bin.max_ratio.max(r);
        if value > 0.0 && r >= ATTAINING_FRACTION * value {
            bin.attaining += 1;
        }
    }
    Ok(SeminormRecord { order, alpha, rho, value, argmax: [g.node_at(a), g.node_at(b)], census, histogram })
}

/// sup over Ω_ρ of the spectral norm of the two-cell Hessian.
pub fn hessian_sup(v: &ScalarField, domain: &Domain, rho: f64) -> Result<f64> {
    let nodes = inner_nodes(v, domain, rho);
    if nodes.is_empty() {
        return Err(Error::Domain(format!("Ω_ρ is empty for ρ = {rho}")));
    }
    let mut best: f64 = 0.0;
    for (i, j) in nodes {
        let d = derivative(v, i, j, 2).ok_or_else(|| Error::Proximity("Hessian stencil leaves the valid region".into()))?;
        best = best.max(diff_norm(&d, &[0.0; 3], 2));
    }
    Ok(best)
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Power-law sweep over f = 1 + H|x − x₀|^α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerlawSpec {
    pub domain: DomainSpec,
    pub alpha: f64,
    pub hs: Vec<f64>,
    pub center: [f64; 2],
    pub rho: f64,
    pub grid: usize,
    pub constants: BoundConstants,
    pub solver: SolverConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerlawRow {
    pub h: f64,
    /// ω(ρ) = Hρ^α.
    pub omega_rho: f64,
    /// sup_{Ω_ρ} |D²v|.
    pub c0: f64,
    /// [D²v]_{α; Ω_ρ}.
    pub seminorm: f64,
    pub bound_d2: f64,
    pub bound_holder: f64,
    pub attaining_distance: f64,
    pub newton_iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerlawReport {
    pub spec: PowerlawSpec,
    pub rows: Vec<PowerlawRow>,
    /// Set when a solve failed; `rows` then holds the values before it.
    pub failure: Option<String>,
    pub slope_all: Option<f64>,
    pub slope_top3: Option<f64>,
    /// Slope over the rows with ω(ρ) ≤ C_mc.
    pub slope_linear: Option<f64>,
    /// Ĉ/α.
    pub bound_slope: f64,
    pub nondecreasing: bool,
    pub superlinear: bool,
    pub dominated: bool,
}

impl PowerlawReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("H,omega_rho,c0,seminorm,bound_d2,bound_holder,attaining_distance,newton_iterations,residual\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.h, r.omega_rho, r.c0, r.seminorm, r.bound_d2, r.bound_holder, r.attaining_distance, r.newton_iterations, r.residual
            ));
        }
        s
    }

    pub fn to_svg(&self) -> Result<String> {
        let measured = self.rows.iter().map(|r| [r.h, r.seminorm]).collect();
        let bound = self.rows.iter().map(|r| [r.h, r.bound_holder]).collect();
        LinePlot {
            title: format!("Hölder seminorm of D²v, α = {}", self.spec.alpha),
            x_label: "H".into(),
            y_label: "[D²v]_α".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series { label: "measured".into(), points: measured, dashed: false },
                Series { label: "evaluated bound".into(), points: bound, dashed: true },
            ],
        }
        .to_svg()
    }
}

pub fn powerlaw_experiment(spec: &PowerlawSpec) -> Result<PowerlawReport> {
    if spec.hs.len() < 5 || spec.hs.windows(2).any(|w| !(w[1] > w[0])) || spec.hs[0] < 0.0 {
        return Err(Error::Domain("H list must be increasing, nonnegative, with at least 5 values".into()));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::Domain(format!("α must lie in (0, 1), got {}", spec.alpha)));
    }
    spec.constants.validate()?;
    let domain = spec.domain.build()?;
    let grid = grid_for(&domain, spec.grid)?;
    let cfg = SolverConfig { grid: spec.grid, ..spec.solver.clone() };
    let rows: Vec<Result<PowerlawRow>> = spec
        .hs
        .par_iter()
        .map(|&h| {
            let family = Family::Holder { h, alpha: spec.alpha, center: spec.center };
            let f = family.sampler()?;
            let (v, report) = solve_on(&domain, &grid, &*f, &|_| 0.0, &cfg)?;
            let rec = measure_holder(&v, &domain, spec.rho, 2, spec.alpha, spec.seed)?;
            let (bound_d2, bound_holder) = holder_corollary(h, spec.alpha, &spec.constants)?;
            let [p, q] = rec.argmax;
            Ok(PowerlawRow {
                h,
                omega_rho: h * spec.rho.powf(spec.alpha),
                c0: hessian_sup(&v, &domain, spec.rho)?,
                seminorm: rec.value,
                bound_d2,
                bound_holder,
                attaining_distance: (p[0] - q[0]).hypot(p[1] - q[1]),
                newton_iterations: report.iterations,
                residual: report.residual,
            })
        })
        .collect();
    let mut done = Vec::new();
    let mut failure = None;
    for r in rows {
        match r {
            Ok(row) => done.push(row),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let pts: Vec<(f64, f64)> = done.iter().map(|r| (r.h, r.seminorm)).collect();
    let slope_top3 = (pts.len() >= 3).then(|| loglog_slope(&pts[pts.len() - 3..])).flatten();
    let linear: Vec<(f64, f64)> = done.iter().filter(|r| r.omega_rho <= spec.constants.c_mc).map(|r| (r.h, r.seminorm)).collect();
    Ok(PowerlawReport {
        spec: spec.clone(),
        slope_all: loglog_slope(&pts),
        slope_top3,
        slope_linear: loglog_slope(&linear),
        bound_slope: spec.constants.cor_hat / spec.alpha,
        nondecreasing: done.windows(2).all(|w| w[1].seminorm >= w[0].seminorm),
        superlinear: slope_top3.is_some_and(|s| s > 1.0),
        dominated: done.iter().all(|r| r.seminorm <= r.bound_holder),
        rows: done,
        failure,
    })
}

/// φ(z) = exp(−1/(1 − |z|²)) on |z| < 1, unnormalized; takes |z|².
pub fn bump(z2: f64) -> f64 {
    if z2 < 1.0 {
        (-1.0 / (1.0 - z2)).exp()
    } else {
        0.0
    }
}

/// Discrete mollifier φ_i on a sub-lattice of the field grid.
#[derive(Clone, Debug)]
struct Kernel {
    /// Sub-cells per grid cell.
    sub: usize,
    /// Support radius in sub-cells (rounded up).
    reach: usize,
    offsets: Vec<(isize, isize)>,
    weights: Vec<f64>,
}

/// Sub-lattice points per kernel radius.
const KERNEL_POINTS: f64 = 8.0;

impl Kernel {
    fn new(i: usize, h: f64) -> Self {
        let radius = 1.0 / i as f64;
        let sub = (KERNEL_POINTS * h / radius).ceil().max(1.0) as usize;
        let s = h / sub as f64;
        let reach = (radius / s).ceil() as usize;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let r = reach as isize;
        for b in -r..=r {
            for a in -r..=r {
                let z2 = ((a * a + b * b) as f64) * s * s / (radius * radius);
                let w = bump(z2);
                if w > 0.0 {
                    offsets.push((a, b));
                    weights.push(w);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { sub, reach, offsets, weights }
    }
}

/// f_ext sampled on the kernel sub-lattice, padded by the kernel reach.
struct Lattice {
    values: Vec<f64>,
    width: usize,
    sub: usize,
    reach: usize,
}

impl Lattice {
    fn new(f: Fun, domain: &Domain, g: &Grid, k: &Kernel) -> Self {
        let s = g.spacing / k.sub as f64;
        let width = (g.nx - 1) * k.sub + 1 + 2 * k.reach;
        let height = (g.ny - 1) * k.sub + 1 + 2 * k.reach;
        let origin = [g.origin[0] - k.reach as f64 * s, g.origin[1] - k.reach as f64 * s];
        let values = (0..width * height)
            .into_par_iter()
            .map(|idx| {
                let p = [origin[0] + (idx % width) as f64 * s, origin[1] + (idx / width) as f64 * s];
                if domain.contains(p) {
                    f(p)
                } else {
                    1.0
                }
            })
            .collect();
        Self { values, width, sub: k.sub, reach: k.reach }
    }

    fn base(&self, i: usize, j: usize) -> (isize, isize) {
        ((i * self.sub + self.reach) as isize, (j * self.sub + self.reach) as isize)
    }

    fn at(&self, base: (isize, isize), off: (isize, isize)) -> f64 {
        self.values[(base.1 + off.1) as usize * self.width + (base.0 + off.0) as usize]
    }
}

/// Checks recorded by [`mollify`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifyDiagnostics {
    pub i: usize,
    pub rho: f64,
    pub radius: f64,
    pub sub_spacing: f64,
    pub kernel_points: usize,
    /// Range of f_ext over the sub-lattice.
    pub f_min: f64,
    pub f_max: f64,
    pub fi_min: f64,
    pub fi_max: f64,
    /// 1 ≤ f_i ≤ f_max at every node.
    pub cond1_ok: bool,
    pub q: Vec<f64>,
    /// ω of f_i on Ω_{ρ/2} per q bucket.
    pub omega_fi: Vec<f64>,
    /// ω of f over the kernel-shifted copies of the same pairs.
    pub omega_f: Vec<f64>,
    /// max over q of ω_{f_i}(q) − ω_f(q).
    pub cond2_excess: f64,
    pub cond2_ok: bool,
    pub pairs: usize,
    /// ∫φ_j (f_iⁿ − fⁿ) for three fixed test functions.
    pub probes: [f64; 3],
    /// sup over Ω_{ρ/2} nodes of |f_i − f|.
    pub sup_diff: f64,
}

#[derive(Clone, Debug)]
pub struct Mollified {
    pub field: ScalarField,
    pub diagnostics: MollifyDiagnostics,
}

/// Round-off allowance in the (cond:fi:2) comparison, relative to f_max.
const COND2_TOL: f64 = 1e-12;

/// f_i = φ_i ∗ f_ext on the nodes of `grid`, where f_ext = f in Ω and 1 outside, φ_i(z) = iⁿφ(iz).
///
/// The convolution is a normalized quadrature on a sub-lattice with at least eight points per kernel
/// radius, so f_i at a node is a convex combination of f_ext samples.
pub fn mollify(f: Fun, domain: &Domain, grid: &Grid, i: usize, rho: f64, seed: u64) -> Result<Mollified> {
    if !(rho > 0.0) || i == 0 {
        return Err(Error::Domain(format!("need ρ > 0 and i ≥ 1, got ρ = {rho}, i = {i}")));
    }
    if !(i as f64 > 2.0 / rho) {
        return Err(Error::Precondition(format!("mollifier index i = {i} must exceed 2/ρ = {:.4}", 2.0 / rho)));
    }
    let kernel = Kernel::new(i, grid.spacing);
    let lattice = Lattice::new(f, domain, grid, &kernel);
    let (f_min, f_max) = lattice.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(f_min >= 1.0) || !f_max.is_finite() {
        return Err(Error::Precondition(format!("f must satisfy 1 ≤ f < ∞, sampled range [{f_min}, {f_max}]")));
    }
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (gi, gj) = grid.coords(idx);
            let base = lattice.base(gi, gj);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &o in &kernel.offsets {
                let v = lattice.at(base, o);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo == hi {
                return lo;
            }
            let sum: f64 = kernel.offsets.iter().zip(&kernel.weights).map(|(&o, w)| w * (lattice.at(base, o) - lo)).sum();
            // a convex combination stays in [lo, hi]; clamp away the round-off
            (lo + sum).min(hi)
        })
        .collect();
    let valid: Vec<bool> = (0..grid.len()).map(|k| domain.contains(grid.node_at(k))).collect();
    let field = ScalarField::new(*grid, values, valid)?;
    let (fi_min, fi_max) = field.valid_nodes().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, _, v)| (a.min(v), b.max(v)));
    let cond1_ok = field.valid_nodes().all(|(_, _, v)| (1.0..=f_max).contains(&v));

    let inner: Vec<(usize, usize)> = inner_nodes(&field, domain, 0.5 * rho);
    if inner.is_empty() {
        return Err(Error::Domain(format!("Ω_(ρ/2) is empty for ρ = {rho}")));
    }
    let h = grid.spacing;
    let q = log_grid(h, domain.diameter(), 24);
    let bucket = |d: f64| q.partition_point(|&s| s < d * (1.0 - 1e-12)).min(q.len() - 1);
    let pair = |a: (usize, usize), b: (usize, usize)| -> (f64, f64, f64) {
        let d = h * ((a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2)).sqrt();
        let lhs = (field.values()[grid.index(a.0, a.1)] - field.values()[grid.index(b.0, b.1)]).abs();
        let (ba, bb) = (lattice.base(a.0, a.1), lattice.base(b.0, b.1));
        let rhs = kernel.offsets.iter().map(|&o| (lattice.at(ba, o) - lattice.at(bb, o)).abs()).fold(0.0, f64::max);
        (d, lhs, rhs)
    };
    let in_inner: Vec<bool> = {
        let mut m = vec![false; grid.len()];
        for &(a, b) in &inner {
            m[grid.index(a, b)] = true;
        }
        m
    };
    let near: Vec<(f64, f64, f64)> = inner
        .par_iter()
        .flat_map_iter(|&(a, b)| {
            let mut out = Vec::new();
            for di in 0..=NEAR_CELLS {
                for dj in -NEAR_CELLS..=NEAR_CELLS {
                    if di == 0 && dj <= 0 {
                        continue;
                    }
                    let (na, nb) = (a as isize + di, b as isize + dj);
                    if na < 0
                        || nb < 0
                        || na as usize >= grid.nx
                        || nb as usize >= grid.ny
                        || !in_inner[grid.index(na as usize, nb as usize)]
                    {
                        continue;
                    }
                    out.push(pair((a, b), (na as usize, nb as usize)));
                }
            }
            out
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random: Vec<((usize, usize), (usize, usize))> = (0..RANDOM_PAIRS)
        .map(|_| (inner[rng.random_range(0..inner.len())], inner[rng.random_range(0..inner.len())]))
        .filter(|(a, b)| a != b)
        .collect();
    let far: Vec<(f64, f64, f64)> = random.par_iter().map(|&(a, b)| pair(a, b)).collect();
    let mut omega_fi = vec![0.0f64; q.len()];
    let mut omega_f = vec![0.0f64; q.len()];
    for &(d, lhs, rhs) in near.iter().chain(&far) {
        let k = bucket(d);
        omega_fi[k] = omega_fi[k].max(lhs);
        omega_f[k] = omega_f[k].max(rhs);
    }
    for k in 1..q.len() {
        omega_fi[k] = omega_fi[k].max(omega_fi[k - 1]);
        omega_f[k] = omega_f[k].max(omega_f[k - 1]);
    }
    let cond2_excess = omega_fi.iter().zip(&omega_f).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);

    let (lo, hi) = domain.bbox();
    let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let r = 0.8 * domain.boundary_distance(c).max(h);
    let mut probes = [0.0; 3];
    let mut sup_diff: f64 = 0.0;
    for (k, p, fi) in field.valid_nodes() {
        let fp = f(p);
        if in_inner[k] {
            sup_diff = sup_diff.max((fi - fp).abs());
        }
        let (x, y) = ((p[0] - c[0]) / r, (p[1] - c[1]) / r);
        let phi = bump(x * x + y * y);
        if phi == 0.0 {
            continue;
        }
        let diff = (fi * fi - fp * fp) * h * h;
        probes[0] += phi * diff;
        probes[1] += phi * x * diff;
        probes[2] += phi * (std::f64::consts::PI * y).cos() * diff;
    }
    let diagnostics = MollifyDiagnostics {
        i,
        rho,
        radius: 1.0 / i as f64,
        sub_spacing: h / kernel.sub as f64,
        kernel_points: kernel.offsets.len(),
        f_min,
        f_max,
        fi_min,
        fi_max,
        cond1_ok,
        q,
        omega_fi,
        omega_f,
        cond2_excess,
        cond2_ok: cond2_excess <= COND2_TOL * f_max,
        pairs: near.len() + far.len(),
        probes,
        sup_diff,
    };
    Ok(Mollified { field, diagnostics })
}

/// Growth factor of the measured seminorm across i treated as blow-up.
pub const BLOWUP_FACTOR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub indices: Vec<usize>,
    pub gamma: f64,
    pub rho: f64,
    pub grid: usize,
    pub constants: BoundConstants,
    pub solver: SolverConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    pub i: usize,
    /// [Dv_i]_{1−γ; Ω_ρ}.
    pub seminorm: f64,
    pub min_value: f64,
    /// sup|v_i − v_{i′}| against the previous index.
    pub sup_diff_prev: Option<f64>,
    pub mollify: MollifyDiagnostics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub gamma: f64,
    pub gamma_range: Option<GammaRange>,
    pub rows: Vec<PipelineRow>,
    /// Successive sup differences strictly decrease; absent for a single index.
    pub cauchy_ok: Option<bool>,
    pub bounded_ok: bool,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    /// [Dv]_{1−γ} of the last v_i, the limit candidate.
    pub limit_seminorm: f64,
    #[serde(skip)]
    pub limit: Option<ScalarField>,
}

/// Solves with each mollified f_i and checks Cauchy behaviour and uniform C^{1,1−γ} bounds.
///
/// `modulus` is the modulus of f used for the admissible γ range.
pub fn discontinuous_pipeline(f: Fun, modulus: &Modulus, domain: &Domain, cfg: &PipelineConfig) -> Result<PipelineReport> {
    if cfg.indices.is_empty() || cfg.indices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("mollifier indices must be nonempty and increasing".into()));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(Error::Domain(format!("γ must lie in (0, 1), got {}", cfg.gamma)));
    }
    let mut warnings = Vec::new();
    let range = match gamma_range(modulus, &cfg.constants) {
        Ok(r) => {
            if !r.contains(cfg.gamma) {
                warnings.push(format!("γ = {} is outside the admissible range starting at β₂ω(0+) = {:.4}", cfg.gamma, r.lo));
            }
            Some(r)
        }
        Err(e) => {
            warnings.push(format!("no admissible γ: {e}"));
            None
        }
    };
    let grid = grid_for(domain, cfg.grid)?;
    let solver = SolverConfig { grid: cfg.grid, ..cfg.solver.clone() };
    let solved: Vec<Result<(usize, ScalarField, MollifyDiagnostics)>> = cfg
        .indices
        .par_iter()
        .map(|&i| {
            let m = mollify(f, domain, &grid, i, cfg.rho, cfg.seed)?;
            let fi = &m.field;
            let lookup = |p: [f64; 2]| fi.grid().nearest(p).and_then(|(a, b)| fi.at(a, b)).unwrap_or(1.0);
            let (v, _) = solve_on(domain, &grid, &lookup, &|_| 0.0, &solver)?;
            Ok((i, v, m.diagnostics))
        })
        .collect();
    let mut rows = Vec::new();
    let mut prev: Option<ScalarField> = None;
    for r in solved {
        let (i, v, diag) = r?;
        let rec = measure_holder(&v, domain, cfg.rho, 1, 1.0 - cfg.gamma, cfg.seed)?;
        let sup_diff_prev = prev.as_ref().map(|p| v.max_abs_diff(p)).transpose()?;
        rows.push(PipelineRow { i, seminorm: rec.value, min_value: v.min().map_or(0.0, |m| m.0), sup_diff_prev, mollify: diag });
        prev = Some(v);
    }
    let degenerate = rows.len() == 1;
    if degenerate {
        warnings.push("single mollifier index: no Cauchy check".into());
    }
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.sup_diff_prev).collect();
    let cauchy_ok = (!degenerate).then(|| diffs.windows(2).all(|w| w[1] < w[0]));
    let first = rows[0].seminorm;
    let peak = rows.iter().map(|r| r.seminorm).fold(0.0, f64::max);
    let bounded_ok = peak <= BLOWUP_FACTOR * first;
    if !bounded_ok {
        warnings.push(format!("[Dv_i]_(1−γ) grows from {first:.4e} to {peak:.4e}: γ may be too small for the measured ω(0+)"));
    }
    Ok(PipelineReport {
        gamma: cfg.gamma,
        gamma_range: range,
        limit_seminorm: rows.last().map_or(0.0, |r| r.seminorm),
        rows,
        cauchy_ok,
        bounded_ok,
        degenerate,
        warnings,
        limit: prev,
    })
}

/// One height of the Ĉ₅ calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C5Sample {
    pub h: f64,
    pub delta: f64,
    /// |D²(𝓕_T w♯)(0) − I| with the perturbed solution.
    pub d2: f64,
    /// The same with f ≡ 1, the discretization floor.
    pub d2_floor: f64,
    /// d2 / (δ/h).
    pub ratio: f64,
}

/// Fits Ĉ₅ on a normalized polygon: one perturbation step of u (det^{1/2}D²u = 1 + a·x₁) at each height,
/// then the unit solution on the next domain measured at 0.
pub fn calibrate_c5(poly: &ConvexPolytope, amplitude: f64, heights: &[f64], cells: usize, cfg: &ChainConfig) -> Result<Vec<C5Sample>> {
    let dom = Domain::polygon(poly.clone())?;
    let grid = solve_grid(poly, cells)?;
    let w = solve_unit_on(&dom, &grid, &cfg.solver)?.0;
    let g = move |p: [f64; 2]| 1.0 + amplitude * p[0];
    let u = solve_on(&dom, &grid, &g, &|_| 0.0, &cfg.solver)?.0;
    let delta = poly.vertices_2d().iter().map(|p| (g(*p) - 1.0).abs()).fold(0.0, f64::max);
    let second = |next: &ConvexPolytope| -> Result<f64> {
        let d = Domain::polygon(next.clone())?;
        let ws = solve_unit_on(&d, &solve_grid(next, cells)?, &cfg.solver)?.0;
        Ok((ws.hessian_at([0.0, 0.0], 2)? - Matrix2::identity()).symmetric_eigenvalues().amax())
    };
    heights
        .iter()
        .map(|&h| {
            let step = perturbation_step(&u, Some(&w), poly, [0.0, 0.0], h, delta, cfg)?;
            let flat = perturbation_step(&w, Some(&w), poly, [0.0, 0.0], h, 0.0, cfg)?;
            let d2 = second(&step.next_domain)?;
            Ok(C5Sample { h, delta, d2, d2_floor: second(&flat.next_domain)?, ratio: d2 / (delta / h) })
        })
        .collect()
}
