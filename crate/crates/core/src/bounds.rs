//! Modulus-of-continuity calculus: ω_f estimation, Dini integrals, 𝓔_d̄, q_in selection and the
//! evaluated right-hand sides of the interior estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};
use crate::solver::Domain;

/// Closed-form tag of a modulus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClosedForm {
    /// ω ≡ c for q > 0.
    Constant { c: f64 },
    /// ω = H q^α.
    Holder { h: f64, alpha: f64 },
    /// ω = s |ln q|^{-a} for q < 1/e, constant s beyond.
    Log { s: f64, a: f64 },
    /// Tabulated values only.
    Custom { label: String },
}

impl ClosedForm {
    fn eval(&self, q: f64) -> Option<f64> {
        match *self {
            ClosedForm::Constant { c } => Some(c),
            ClosedForm::Holder { h, alpha } => Some(h * q.powf(alpha)),
            ClosedForm::Log { s, a } => Some(if q < (-1.0f64).exp() { s * (-q.ln()).powf(-a) } else { s }),
            ClosedForm::Custom { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClosedForm::Constant { c } => c >= 0.0,
            ClosedForm::Holder { h, alpha } => h >= 0.0 && alpha > 0.0,
            ClosedForm::Log { s, a } => s >= 0.0 && a > 0.0,
            ClosedForm::Custom { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid closed-form modulus {self:?}")))
        }
    }
}

/// How a sampled modulus was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub spacing: f64,
    pub nodes: usize,
    pub near_pairs: usize,
    pub directional_pairs: usize,
    pub random_pairs: usize,
    /// Pairs joining the anchor node to every other node.
    #[serde(default)]
    pub star_pairs: usize,
    pub seed: u64,
}

/// Samples of a modulus of continuity on an increasing q grid, with optional closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modulus {
    q: Vec<f64>,
    omega: Vec<f64>,
    form: Option<ClosedForm>,
    census: Option<Census>,
}

/// `count` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count.max(2) - 1) as f64).exp()).collect()
}

impl Modulus {
    /// Tabulated modulus; the running-max envelope is applied.
    pub fn from_table(q: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.len() != omega.len() {
            return Err(Error::Domain("modulus table needs matching nonempty columns".into()));
        }
        if q[0] <= 0.0 || q.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("modulus q grid must be positive and strictly increasing".into()));
        }
        if omega.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("modulus values must be finite and nonnegative".into()));
        }
        let mut env = omega;
        for k in 1..env.len() {
            env[k] = env[k].max(env[k - 1]);
        }
        Ok(Self { q, omega: env, form: None, census: None })
    }

    pub fn closed(form: ClosedForm, q: Vec<f64>) -> Result<Self> {
        form.validate()?;
        if matches!(form, ClosedForm::Custom { .. }) {
            return Err(Error::Domain("a custom modulus needs a table".into()));
        }
        let omega = q.iter().map(|&s| form.eval(s).unwrap_or(0.0)).collect();
        let mut m = Self::from_table(q, omega)?;
        m.form = Some(form);
        Ok(m)
    }

    pub fn with_form(mut self, form: ClosedForm) -> Result<Self> {
        form.validate()?;
        self.form = Some(form);
        Ok(self)
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn form(&self) -> Option<&ClosedForm> {
        self.form.as_ref()
    }

    pub fn census(&self) -> Option<&Census> {
        self.census.as_ref()
    }

    fn analytic(&self) -> Option<&ClosedForm> {
        self.form.as_ref().filter(|f| !matches!(f, ClosedForm::Custom { .. }))
    }

    /// ω(q): the closed form when known, else log-log interpolation of the table.
    pub fn eval(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return self.omega_zero();
        }
        if let Some(v) = self.analytic().and_then(|f| f.eval(q)) {
            return v;
        }
        let n = self.q.len();
        if q >= self.q[n - 1] {
            return self.omega[n - 1];
        }
        if q <= self.q[0] {
            return self.extrapolate_below(q);
        }
        let k = self.q.partition_point(|&s| s <= q) - 1;
        interpolate_segment(self.q[k], self.q[k + 1], self.omega[k], self.omega[k + 1], q)
    }

    /// Smallest tabulated value at or above q, an upper estimate for monotone ω.
    pub fn eval_upper(&self, q: f64) -> f64 {
        if let Some(v) = self.analytic().and_then(|f| f.eval(q)) {
            return v;
        }
        let k = self.q.partition_point(|&s| s < q * (1.0 - 1e-12));
        self.omega[k.min(self.q.len() - 1)]
    }

    /// ω(0+): exact for closed forms, otherwise the envelope at the smallest resolved q.
    pub fn omega_zero(&self) -> f64 {
        match self.analytic() {
            Some(ClosedForm::Constant { c }) => *c,
            Some(_) => 0.0,
            None => self.omega[0],
        }
    }

    fn extrapolate_below(&self, q: f64) -> f64 {
        let p = self.low_exponent();
        self.omega[0] * (q / self.q[0]).powf(p)
    }

    /// Power-law exponent of the lowest tabulated segment (0 when it is flat or starts at zero).
    fn low_exponent(&self) -> f64 {
        if self.q.len() < 2 || self.omega[0] <= 0.0 {
            return 0.0;
        }
        (self.omega[1] / self.omega[0]).ln() / (self.q[1] / self.q[0]).ln()
    }

    /// Same table with every value multiplied by `factor` (closed forms scaled alike).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut m = Self::from_table(self.q.clone(), self.omega.iter().map(|w| w * factor).collect())?;
        m.form = self.form.clone().map(|f| match f {
            ClosedForm::Constant { c } => ClosedForm::Constant { c: c * factor },
            ClosedForm::Holder { h, alpha } => ClosedForm::Holder { h: h * factor, alpha },
            ClosedForm::Log { s, a } => ClosedForm::Log { s: s * factor, a },
            other => other,
        });
        m.census = self.census.clone();
        Ok(m)
    }

    /// ω − ω(0+) as a tabulated modulus.
    fn shifted(&self) -> Result<Self> {
        let w0 = self.omega_zero();
        let mut m = Self::from_table(self.q.clone(), self.q.iter().map(|&q| (self.eval(q) - w0).max(0.0)).collect())?;
        m.form = match self.analytic() {
            Some(ClosedForm::Constant { .. }) => Some(ClosedForm::Constant { c: 0.0 }),
            Some(f) => Some(f.clone()),
            None => None,
        };
        Ok(m)
    }
}

fn interpolate_segment(q0: f64, q1: f64, w0: f64, w1: f64, q: f64) -> f64 {
    if w0 > 0.0 && w1 > 0.0 {
        let p = (w1 / w0).ln() / (q1 / q0).ln();
        w0 * (q / q0).powf(p)
    } else {
        w0 + (w1 - w0) * (q - q0) / (q1 - q0)
    }
}

/// ∫_{q0}^{q1} ω q^{-m} dq for ω interpolated between (q0, w0) and (q1, w1) as in [`interpolate_segment`].
fn segment_integral(q0: f64, q1: f64, w0: f64, w1: f64, lo: f64, hi: f64, m: i32) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if w0 > 0.0 && w1 > 0.0 {
        let p = (w1 / w0).ln() / (q1 / q0).ln();
        power_integral(w0 * q0.powf(-p), p - m as f64, lo, hi)
    } else {
        let b = (w1 - w0) / (q1 - q0);
        let a = w0 - b * q0;
        power_integral(a, -(m as f64), lo, hi) + power_integral(b, 1.0 - m as f64, lo, hi)
    }
}

/// ∫_lo^hi c q^e dq.
fn power_integral(c: f64, e: f64, lo: f64, hi: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    if (e + 1.0).abs() < 1e-12 {
        c * (hi / lo).ln()
    } else {
        c * (hi.powf(e + 1.0) - lo.powf(e + 1.0)) / (e + 1.0)
    }
}

/// Romberg integration of g over [a, b].
fn romberg(g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mut prev = vec![0.5 * (b - a) * (g(a) + g(b))];
    for level in 1..22 {
        let n = 1usize << level;
        let h = (b - a) / n as f64;
        let mid: f64 = (0..n / 2).map(|k| g(a + (2 * k + 1) as f64 * h)).sum();
        let mut row = vec![0.5 * prev[0] + h * mid];
        let mut factor = 1.0;
        for j in 1..=prev.len() {
            factor *= 4.0;
            row.push(row[j - 1] + (row[j - 1] - prev[j - 1]) / (factor - 1.0));
        }
        let (last, before) = (row[row.len() - 1], prev[prev.len() - 1]);
        if level > 4 && (last - before).abs() <= 1e-13 * last.abs().max(1e-300) {
            return last;
        }
        prev = row;
    }
    prev[prev.len() - 1]
}

/// ∫_a^b w(q) q^{-m} dq by Romberg on the log-substituted trapezoid rule, split at `breaks`.
fn log_quadrature(w: &dyn Fn(f64) -> f64, a: f64, b: f64, m: i32, breaks: &[f64]) -> f64 {
    let (ta, tb) = (a.ln(), b.ln());
    let mut cuts = vec![ta];
    let pieces = ((tb - ta) / 1.0).ceil().max(1.0) as usize;
    for k in 1..pieces {
        cuts.push(ta + (tb - ta) * k as f64 / pieces as f64);
    }
    cuts.extend(breaks.iter().map(|q| q.ln()).filter(|&t| t > ta && t < tb));
    cuts.push(tb);
    cuts.sort_by(f64::total_cmp);
    let g = |t: f64| w(t.exp()) * ((1 - m) as f64 * t).exp();
    cuts.windows(2).map(|c| romberg(&g, c[0], c[1])).sum()
}

/// ∫_a^b ω(q) q^{-moment} dq; `f64::INFINITY` when a = 0 and the integral diverges.
pub fn dini_integral(m: &Modulus, a: f64, b: f64, moment: u32) -> Result<f64> {
    if !(a >= 0.0 && a < b) {
        return Err(Error::Domain(format!("integration limits must satisfy 0 ≤ a < b, got [{a}, {b}]")));
    }
    if moment != 1 && moment != 2 {
        return Err(Error::Domain(format!("moment must be 1 or 2, got {moment}")));
    }
    let mi = moment as i32;
    match m.analytic() {
        Some(form) => closed_integral(form, a, b, mi),
        None => Ok(table_integral(m, a, b, mi)),
    }
}

fn closed_integral(form: &ClosedForm, a: f64, b: f64, m: i32) -> Result<f64> {
    let w = |q: f64| form.eval(q).unwrap_or(0.0);
    let breaks = [(-1.0f64).exp()];
    if a > 0.0 {
        return Ok(log_quadrature(&w, a, b, m, &breaks));
    }
    let c = b.min(1e-2);
    let tail = match *form {
        ClosedForm::Constant { c: k } => {
            if k == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        ClosedForm::Holder { h, alpha } => {
            let e = alpha + 1.0 - m as f64;
            if h == 0.0 {
                0.0
            } else if e > 0.0 {
                h * c.powf(e) / e
            } else {
                f64::INFINITY
            }
        }
        ClosedForm::Log { s, a: p } => {
            if s == 0.0 {
                0.0
            } else if m == 1 && p > 1.0 {
                s * (-c.ln()).powf(1.0 - p) / (p - 1.0)
            } else {
                f64::INFINITY
            }
        }
        ClosedForm::Custom { .. } => unreachable!("custom forms integrate as tables"),
    };
    if !tail.is_finite() {
        return Ok(f64::INFINITY);
    }
    let body = if c < b { log_quadrature(&w, c, b, m, &breaks) } else { 0.0 };
    Ok(tail + body)
}

fn table_integral(md: &Modulus, a: f64, b: f64, m: i32) -> f64 {
    let (q, w) = (&md.q, &md.omega);
    let n = q.len();
    let mut total = 0.0;
    let q0 = q[0];
    let lo = a.max(0.0);
    if lo < q0 {
        let hi = b.min(q0);
        if lo == 0.0 {
            let t = table_tail(md, m);
            if !t.is_finite() {
                return f64::INFINITY;
            }
            total += t;
            if hi < q0 {
                total -= power_integral(w[0] * q0.powf(-md.low_exponent()), md.low_exponent() - m as f64, hi, q0);
            }
        } else {
            total += power_integral(w[0] * q0.powf(-md.low_exponent()), md.low_exponent() - m as f64, lo, hi);
        }
    }
    for k in 0..n.saturating_sub(1) {
        total += segment_integral(q[k], q[k + 1], w[k], w[k + 1], lo.max(q[k]), b.min(q[k + 1]), m);
    }
    if b > q[n - 1] {
        total += power_integral(w[n - 1], -(m as f64), lo.max(q[n - 1]), b);
    }
    total
}

/// ∫_0^{q_0} of a tabulated modulus: Cauchy test on the two lowest decades, geometric tail.
fn table_tail(md: &Modulus, m: i32) -> f64 {
    let q0 = md.q[0];
    if md.omega[0] == 0.0 {
        return 0.0;
    }
    let d1 = table_integral(md, q0, 10.0 * q0, m);
    let d2 = table_integral(md, 10.0 * q0, 100.0 * q0, m);
    let ratio = d1 / d2;
    if !(ratio <= 0.75) {
        return f64::INFINITY;
    }
    d1 * ratio / (1.0 - ratio)
}

/// Where a modulus is sampled: Ω_inset = {dist(·, ∂Ω) > inset}, optionally intersected with a ball.
#[derive(Clone, Debug)]
pub struct Region {
    pub domain: Domain,
    pub inset: f64,
    pub ball: Option<([f64; 2], f64)>,
}

impl Region {
    pub fn new(domain: Domain) -> Self {
        Self { domain, inset: 0.0, ball: None }
    }

    pub fn inset(mut self, rho: f64) -> Self {
        self.inset = rho;
        self
    }

    pub fn ball(mut self, center: [f64; 2], r: f64) -> Self {
        self.ball = Some((center, r));
        self
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.domain.contains(p)
            && (self.inset <= 0.0 || self.domain.boundary_distance(p) > self.inset)
            && self.ball.is_none_or(|(c, r)| (p[0] - c[0]).hypot(p[1] - c[1]) <= r)
    }

    /// Samples f on a grid with `n` nodes across the domain's bounding box.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64, n: usize) -> Result<ScalarField> {
        let (lo, hi) = self.domain.bbox();
        ScalarField::from_fn(Grid::covering(lo, hi, n)?, f, |p| self.contains(p))
    }
}

/// Random far pairs drawn by [`estimate_modulus`].
pub const RANDOM_PAIRS: usize = 100_000;
/// Half-width (cells) of the all-pairs neighbourhood.
const NEAR_CELLS: isize = 4;

/// Sampled modulus of the valid values of `samples` on `q_grid`; q below the spacing are dropped.
///
/// All pairs within a few cells, lattice pairs along 8 directions at each q and random far pairs
/// are bucketed by distance, then a running max gives ω(q). This is a lower estimate of the true sup.
pub fn estimate_modulus(samples: &ScalarField, q_grid: &[f64], seed: u64) -> Result<Modulus> {
    sampled_modulus(samples, q_grid, seed, None)
}

/// [`estimate_modulus`] plus the pairs joining the point `anchor`, where the sampled function equals
/// `value`, to every node, so that sup |f(y) − f(anchor)| over |y − anchor| ≤ q never exceeds ω(q).
pub fn estimate_modulus_about(samples: &ScalarField, q_grid: &[f64], seed: u64, anchor: [f64; 2], value: f64) -> Result<Modulus> {
    sampled_modulus(samples, q_grid, seed, Some((anchor, value)))
}

fn sampled_modulus(samples: &ScalarField, q_grid: &[f64], seed: u64, anchor: Option<([f64; 2], f64)>) -> Result<Modulus> {
    let g = *samples.grid();
    let h = g.spacing;
    let q: Vec<f64> = q_grid.iter().copied().filter(|&s| s >= h * (1.0 - 1e-9)).collect();
    if q.is_empty() || q.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("q grid must be increasing with values at or above the sample spacing".into()));
    }
    let nodes: Vec<(usize, usize, f64)> = samples
        .valid_nodes()
        .map(|(k, _, v)| {
            let (i, j) = g.coords(k);
            (i, j, v)
        })
        .collect();
    if nodes.is_empty() {
        return Err(Error::Domain("modulus region is empty".into()));
    }
    let mut raw = vec![0.0f64; q.len()];
    let qmax = q[q.len() - 1];
    let mut record = |d: f64, diff: f64| {
        if d <= qmax * (1.0 + 1e-12) {
            let k = q.partition_point(|&s| s < d * (1.0 - 1e-12));
            raw[k] = raw[k].max(diff);
        }
    };
    let at = |i: isize, j: isize| -> Option<f64> {
        if i < 0 || j < 0 || i as usize >= g.nx || j as usize >= g.ny {
            return None;
        }
        samples.at(i as usize, j as usize)
    };
    let mut census = Census { spacing: h, nodes: nodes.len(), near_pairs: 0, directional_pairs: 0, random_pairs: 0, star_pairs: 0, seed };
    if let Some((a, va)) = anchor {
        for &(i, j, v) in &nodes {
            let p = g.node(i, j);
            record((p[0] - a[0]).hypot(p[1] - a[1]).max(h), (v - va).abs());
            census.star_pairs += 1;
        }
    }
    for &(i, j, v) in &nodes {
        for di in 0..=NEAR_CELLS {
            for dj in -NEAR_CELLS..=NEAR_CELLS {
                if di == 0 && dj <= 0 {
                    continue;
                }
                if let Some(w) = at(i as isize + di, j as isize + dj) {
                    record(h * ((di * di + dj * dj) as f64).sqrt(), (v - w).abs());
                    census.near_pairs += 1;
                }
            }
        }
    }
    let mut offsets: Vec<(isize, isize)> = Vec::new();
    for &s in &q {
        let m = (s / h + 1e-9).floor() as isize;
        let d = (s / (h * std::f64::consts::SQRT_2) + 1e-9).floor() as isize;
        if m > NEAR_CELLS {
            offsets.extend([(m, 0), (0, m)]);
        }
        if d > NEAR_CELLS / 2 {
            offsets.extend([(d, d), (d, -d)]);
        }
    }
    offsets.sort();
    offsets.dedup();
    for &(i, j, v) in &nodes {
        for &(di, dj) in &offsets {
            if let Some(w) = at(i as isize + di, j as isize + dj) {
                record(h * ((di * di + dj * dj) as f64).sqrt(), (v - w).abs());
                census.directional_pairs += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_PAIRS {
        let a = nodes[rng.random_range(0..nodes.len())];
        let b = nodes[rng.random_range(0..nodes.len())];
        let d = h * ((a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2)).sqrt();
        record(d, (a.2 - b.2).abs());
        census.random_pairs += 1;
    }
    let mut m = Modulus::from_table(q, raw)?;
    m.census = Some(census);
    Ok(m)
}

/// Largest q ≤ ρ among ρ and the modulus grid with ω(q) ≤ C_mc (upper tabulated value).
pub fn choose_q_in(m: &Modulus, rho: f64, c_mc: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("ρ must be positive, got {rho}")));
    }
    let candidates = std::iter::once(rho).chain(m.q.iter().rev().copied().filter(|&q| q < rho));
    for q in candidates {
        if m.eval_upper(q) <= c_mc {
            return Ok(q);
        }
    }
    Err(Error::NoAdmissibleQin(format!("ω({:.3e}) = {:.3e} exceeds C_mc = {c_mc:.3e}", m.q[0], m.eval_upper(m.q[0]))))
}

/// Constants block stamped into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConstants {
    pub n: usize,
    pub h_c: f64,
    /// Ĉ₅: fitted ratio |D²(𝓕_T w♯)(0) − I| / (δ/h).
    pub c5: f64,
    pub beta: f64,
    pub beta1: f64,
    pub c_bar: f64,
    pub c_mc: f64,
    /// Q_in = qin_coef · q_in^{-qin_exp}.
    pub qin_coef: f64,
    pub qin_exp: f64,
    /// ĉ₂, Ĉ₂: eccentricity and Hessian-increment constants fitted on f ≡ 1.
    pub c2_lo: f64,
    pub c2_hi: f64,
    /// Ĉ in M_k ≤ Ĉ·𝓔₀.
    pub c_m: f64,
    /// θ̂: recorded section shrink ratio.
    pub theta: f64,
    /// C̃, C, Ĉ of the Hölder corollary.
    pub cor_tilde: f64,
    pub cor_c: f64,
    pub cor_hat: f64,
    /// Fitted κ with |Dw(0)| ≤ κ δ^{1/2}.
    pub kappa: f64,
    /// C₄: step acceptance δ ≤ min(C₄ h, 1/(5n²)).
    pub c4: f64,
}

/// β = 1.12 Ĉ₅ / (−h_c ln(1.2 √h_c)).
pub fn beta_from(c5: f64, h_c: f64) -> f64 {
    1.12 * c5 / (-h_c * (1.2 * h_c.sqrt()).ln())
}

pub const DEFAULT_C5: f64 = 0.055;

impl Default for BoundConstants {
    fn default() -> Self {
        let h_c = 0.2;
        Self {
            n: 2,
            h_c,
            c5: DEFAULT_C5,
            beta: beta_from(DEFAULT_C5, h_c),
            beta1: 3.0,
            c_bar: 4.0,
            c_mc: 0.01,
            qin_coef: 1.0,
            qin_exp: 4.0,
            c2_lo: 0.95,
            c2_hi: 1.05,
            c_m: 1.1,
            theta: 0.7,
            cor_tilde: 2.0,
            cor_c: 1.0,
            cor_hat: 1.0,
            kappa: 0.1,
            c4: 0.5,
        }
    }
}

impl BoundConstants {
    /// β₂ = β max{1, β₁}.
    pub fn beta2(&self) -> f64 {
        self.beta * self.beta1.max(1.0)
    }

    pub fn q_in_value(&self, q_in: f64) -> f64 {
        self.qin_coef * q_in.powf(-self.qin_exp)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.h_c,
            self.c5,
            self.beta,
            self.beta1,
            self.c_bar,
            self.c_mc,
            self.qin_coef,
            self.qin_exp,
            self.c2_lo,
            self.c2_hi,
            self.c_m,
            self.theta,
            self.cor_tilde,
            self.cor_c,
            self.cor_hat,
            self.kappa,
            self.c4,
        ];
        if self.n == 0 || all.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::Domain("bound constants must be finite and positive".into()));
        }
        if self.h_c > 0.2 {
            return Err(Error::Domain(format!("h_c = {} exceeds 1/5", self.h_c)));
        }
        Ok(())
    }
}

/// (𝓔_d̄, 𝓔₀); 𝓔₀ is infinite for a non-Dini modulus.
pub fn eval_e(m: &Modulus, d_bar: f64, q_in: f64, consts: &BoundConstants) -> Result<(f64, f64)> {
    let lo = consts.c_bar * d_bar;
    if !(lo > 0.0 && lo < q_in) {
        return Err(Error::Domain(format!("need 0 < C̄d̄ = {lo:.3e} < q_in = {q_in:.3e}")));
    }
    let e_d = (consts.beta * dini_integral(m, lo, q_in, 1)?).exp();
    let e_0 = (consts.beta * dini_integral(m, 0.0, q_in, 1)?).exp();
    Ok((e_d, e_0.max(e_d)))
}

/// Both branches of a case split on Q_in·d̄.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Branches {
    pub small: f64,
    pub large: f64,
    pub active: f64,
}

/// γ range ⟨β₂ω(0+), 1) with the left end closed when ∫₀(ω − ω(0+))dq/q < ∞.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRange {
    pub lo: f64,
    pub hi: f64,
    pub closed_left: bool,
    pub omega_zero: f64,
}

impl GammaRange {
    pub fn contains(&self, gamma: f64) -> bool {
        gamma < self.hi && (gamma > self.lo || (self.closed_left && gamma == self.lo))
    }
}

/// Evaluated right-hand sides for one (ω, d̄) with the constants used.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub constants: BoundConstants,
    pub f_max: f64,
    pub rho: f64,
    pub d_bar: f64,
    pub q_in: f64,
    pub q_in_value: f64,
    pub e_d: f64,
    pub e_0: f64,
    /// ∫_{C̄d̄}^{q_in} ω dq/q.
    pub dini_first: f64,
    /// ∫_{C̄d̄}^{q_in} ω dq/q².
    pub dini_second: f64,
    pub small_branch: bool,
    /// Bound on |Dv(x) − Dv(x′)|/d̄.
    pub gradient: Branches,
    /// Bound on sup|D²v|.
    pub hessian: f64,
    /// Bound on |D²v(x) − D²v(x′)|.
    pub hessian_difference: Branches,
    pub holder: Option<HolderBounds>,
    pub gamma: Option<GammaRange>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderBounds {
    pub d2: f64,
    pub d2_holder: f64,
    /// Corollary expression for |D²v(x) − D²v(x′)|/d̄^α assembled with Q′ = max(Q_in, 1)^{1+α}.
    pub assembled: f64,
}

/// Bounds with q_in chosen from the modulus.
pub fn eval_theorem_bounds(m: &Modulus, d_bar: f64, consts: &BoundConstants, f_max: f64, rho: f64) -> Result<BoundReport> {
    let q_in = choose_q_in(m, rho, consts.c_mc)?;
    eval_theorem_bounds_at(m, d_bar, q_in, consts, f_max, rho)
}

/// Bounds at a given q_in.
pub fn eval_theorem_bounds_at(m: &Modulus, d_bar: f64, q_in: f64, consts: &BoundConstants, f_max: f64, rho: f64) -> Result<BoundReport> {
    consts.validate()?;
    if !(f_max >= 1.0) {
        return Err(Error::Domain(format!("f_max must be at least 1, got {f_max}")));
    }
    let (e_d, e_0) = eval_e(m, d_bar, q_in, consts)?;
    let q = consts.q_in_value(q_in);
    let lo = consts.c_bar * d_bar;
    let dini_first = dini_integral(m, lo, q_in, 1)?;
    let dini_second = dini_integral(m, lo, q_in, 2)?;
    let small_branch = q * d_bar < 1.0;
    let arg = q * e_d * d_bar;
    let w_arg = m.eval(arg);
    let gradient = {
        let small = q * (e_d + e_d.powf(consts.beta1) * w_arg);
        Branches { small, large: q, active: if small_branch { small } else { q } }
    };
    let hessian = q * e_0;
    let hessian_difference = {
        let inner = dini_integral(m, 0.0, arg, 1)?;
        let small = q * (e_0 * inner + (1.0 + e_d * e_d * dini_second) * d_bar + e_d.powf(consts.beta1) * w_arg);
        Branches { small, large: q * e_0, active: if small_branch { small } else { q * e_0 } }
    };
    let holder = match m.analytic() {
        Some(&ClosedForm::Holder { h, alpha }) if alpha > 0.0 && alpha < 1.0 => {
            let (d2, d2_holder) = holder_corollary(h, alpha, consts)?;
            let qp = q.max(1.0).powf(1.0 + alpha);
            let assembled = qp * h * (e_0.powf(1.0 + alpha) / alpha + e_d * e_d / (1.0 - alpha) + e_d.powf(consts.beta1 + alpha)) + qp;
            Some(HolderBounds { d2, d2_holder, assembled })
        }
        _ => None,
    };
    Ok(BoundReport {
        constants: consts.clone(),
        f_max,
        rho,
        d_bar,
        q_in,
        q_in_value: q,
        e_d,
        e_0,
        dini_first,
        dini_second,
        small_branch,
        gradient,
        hessian,
        hessian_difference,
        holder,
        gamma: gamma_range(m, consts).ok(),
    })
}

/// (C̃((CH)^{Ĉ/α} + 1), C̃((CH)^{Ĉ/α}/(α(1−α)) + 1)).
pub fn holder_corollary(h: f64, alpha: f64, consts: &BoundConstants) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("α must lie in (0, 1), got {alpha}")));
    }
    if !(h >= 0.0) {
        return Err(Error::Domain(format!("H must be nonnegative, got {h}")));
    }
    let p = (consts.cor_c * h).powf(consts.cor_hat / alpha);
    Ok((consts.cor_tilde * (p + 1.0), consts.cor_tilde * (p / (alpha * (1.0 - alpha)) + 1.0)))
}

/// Admissible γ for the discontinuous-f regularity statement.
pub fn gamma_range(m: &Modulus, consts: &BoundConstants) -> Result<GammaRange> {
    let w0 = m.omega_zero();
    let b2 = consts.beta2();
    let limit = consts.c_mc.min(1.0 / b2);
    if !(w0 < limit) {
        return Err(Error::NoAdmissibleGamma(format!("ω(0+) = {w0:.4e} is not below min(C_mc, 1/β₂) = {limit:.4e}")));
    }
    // A table cannot resolve how ω approaches a positive ω(0+), so only flat tables close the left end.
    let closed_left = if m.analytic().is_none() && w0 > 0.0 {
        m.omega.iter().all(|&w| w == w0)
    } else {
        let rest = m.shifted()?;
        dini_integral(&rest, 0.0, rest.q[rest.q.len() - 1].max(1.0), 1)?.is_finite()
    };
    Ok(GammaRange { lo: b2 * w0, hi: 1.0, closed_left, omega_zero: w0 })
}

/// Which logarithmic example to evaluate.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LogExample {
    /// σ = max{σ₀, σ₀β₁ − 1} + eps; 𝓔_d̄ / |ln d̄|^σ at each d̄.
    Example1 { eps: f64, q_in: f64, d_bars: Vec<f64> },
    /// Integration-by-parts check of ∫_{C̄d̄}^{q_in} |ln q|^{-a} dq/q².
    Example2 { a: f64, q_in: f64, d_bar: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LogBound {
    Example1 {
        sigma0: f64,
        sigma_min: f64,
        sigma: f64,
        /// (d̄, 𝓔_d̄, 𝓔_d̄ / |ln d̄|^σ).
        ratios: Vec<(f64, f64, f64)>,
    },
    Example2 {
        limsup: f64,
        direct: f64,
        boundary: f64,
        remainder: f64,
        identity_error: f64,
        remainder_ratio: f64,
    },
}

/// limsup_{q→0} ω(q)|ln q|^p, from the closed form or the lowest decade of the table.
fn log_limsup(m: &Modulus, p: f64) -> f64 {
    match m.analytic() {
        Some(&ClosedForm::Constant { c }) => {
            if c == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        Some(ClosedForm::Holder { .. }) => 0.0,
        Some(&ClosedForm::Log { s, a }) => {
            if s == 0.0 || a > p {
                0.0
            } else if a == p {
                s
            } else {
                f64::INFINITY
            }
        }
        _ => {
            let q0 = m.q[0];
            m.q.iter().zip(&m.omega).filter(|(q, _)| **q <= 10.0 * q0 && **q < 1.0).map(|(q, w)| w * (-q.ln()).powf(p)).fold(0.0, f64::max)
        }
    }
}

pub fn eval_log_moduli(m: &Modulus, example: &LogExample, consts: &BoundConstants) -> Result<LogBound> {
    match example {
        LogExample::Example1 { eps, q_in, d_bars } => {
            let sigma0 = consts.beta * log_limsup(m, 1.0);
            if !sigma0.is_finite() {
                return Err(Error::Domain("β limsup ω(q)|ln q| is infinite for this modulus".into()));
            }
            if !(*eps > 0.0) {
                return Err(Error::Domain("σ margin must be positive".into()));
            }
            let sigma_min = sigma0.max(sigma0 * consts.beta1 - 1.0);
            let sigma = sigma_min + eps;
            let mut ratios = Vec::with_capacity(d_bars.len());
            for &d in d_bars {
                if !(d > 0.0 && d <= 0.5) {
                    return Err(Error::Domain(format!("d̄ = {d} outside (0, 1/2]")));
                }
                let (e_d, _) = eval_e(m, d, *q_in, consts)?;
                ratios.push((d, e_d, e_d / (-d.ln()).powf(sigma)));
            }
            Ok(LogBound::Example1 { sigma0, sigma_min, sigma, ratios })
        }
        LogExample::Example2 { a, q_in, d_bar } => {
            if !(*a > 1.0) {
                return Err(Error::Domain(format!("example 2 needs a > 1, got {a}")));
            }
            let limsup = log_limsup(m, *a);
            if !limsup.is_finite() {
                return Err(Error::Domain(format!("limsup ω(q)|ln q|^{a} is infinite for this modulus")));
            }
            let lo = consts.c_bar * d_bar;
            if !(lo > 0.0 && lo < *q_in && *q_in < 1.0) {
                return Err(Error::Domain(format!("need 0 < C̄d̄ < q_in < 1, got C̄d̄ = {lo}, q_in = {q_in}")));
            }
            let l = |q: f64| -q.ln();
            let direct = log_quadrature(&|q| l(q).powf(-a), lo, *q_in, 2, &[]);
            let boundary = l(lo).powf(-a) / lo - l(*q_in).powf(-a) / q_in;
            let remainder = log_quadrature(&|q| a * l(q).powf(-a - 1.0), lo, *q_in, 2, &[]);
            let identity_error = (direct - boundary - remainder).abs() / direct;
            Ok(LogBound::Example2 { limsup, direct, boundary, remainder, identity_error, remainder_ratio: remainder / direct })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Vec<f64> {
        log_grid(1e-6, 1.0, 61)
    }

    fn holder(h: f64, alpha: f64) -> Modulus {
        Modulus::closed(ClosedForm::Holder { h, alpha }, grid()).unwrap()
    }

    #[test]
    fn lipschitz_integral_is_exact() {
        let m = holder(1.0, 1.0);
        let r = 0.7;
        assert!((dini_integral(&m, 0.0, r, 1).unwrap() - r).abs() < 1e-12);
        let t = Modulus::from_table(grid(), grid()).unwrap();
        assert!((dini_integral(&t, 0.0, r, 1).unwrap() - r).abs() < 1e-9);
    }

    #[test]
    fn holder_quadrature_matches_antiderivative() {
        for &(h, alpha, a, b) in &[(2.0, 0.5, 1e-3, 0.8), (0.3, 0.25, 1e-6, 0.1), (1.5, 0.8, 0.01, 3.0)] {
            let m = holder(h, alpha);
            let got = dini_integral(&m, a, b, 1).unwrap();
            let exact = h * (b.powf(alpha) - a.powf(alpha)) / alpha;
            assert!((got - exact).abs() <= 1e-6 * exact, "{got} vs {exact}");
            let got2 = dini_integral(&m, a, b, 2).unwrap();
            let exact2 = h * (a.powf(alpha - 1.0) - b.powf(alpha - 1.0)) / (1.0 - alpha);
            assert!((got2 - exact2).abs() <= 1e-6 * exact2);
            let t = Modulus::from_table(log_grid(a, b, 30), log_grid(a, b, 30).iter().map(|q| h * q.powf(alpha)).collect()).unwrap();
            let tab = dini_integral(&t, a, b, 1).unwrap();
            assert!((tab - exact).abs() <= 1e-6 * exact);
        }
        assert_eq!(dini_integral(&holder(1.0, 0.5), 0.0, 1.0, 2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_and_log_families() {
        let c = Modulus::closed(ClosedForm::Constant { c: 0.2 }, grid()).unwrap();
        let got = dini_integral(&c, 1e-3, 0.5, 1).unwrap();
        assert!((got - 0.2 * 500f64.ln()).abs() < 1e-6 * got);
        assert_eq!(dini_integral(&c, 0.0, 0.5, 1).unwrap(), f64::INFINITY);
        let zero = Modulus::closed(ClosedForm::Constant { c: 0.0 }, grid()).unwrap();
        assert_eq!(dini_integral(&zero, 0.0, 0.5, 2).unwrap(), 0.0);

        let l = Modulus::closed(ClosedForm::Log { s: 1.0, a: 1.0 }, grid()).unwrap();
        let (a, b): (f64, f64) = (1e-8, 0.1);
        let exact = ((-a.ln()) / (-b.ln())).ln();
        let got = dini_integral(&l, a, b, 1).unwrap();
        assert!((got - exact).abs() <= 1e-6 * exact);
        assert_eq!(dini_integral(&l, 0.0, b, 1).unwrap(), f64::INFINITY);
        let tab = Modulus::from_table(l.q().to_vec(), l.omega().to_vec()).unwrap();
        assert_eq!(dini_integral(&tab, 0.0, b, 1).unwrap(), f64::INFINITY);

        let l2 = Modulus::closed(ClosedForm::Log { s: 0.5, a: 2.0 }, grid()).unwrap();
        let exact = 0.5 / (-b.ln());
        let got = dini_integral(&l2, 0.0, b, 1).unwrap();
        assert!((got - exact).abs() <= 1e-6 * exact, "{got} vs {exact}");
        assert!(matches!(dini_integral(&l2, 0.2, 0.1, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn q_in_selection() {
        let zero = Modulus::closed(ClosedForm::Constant { c: 0.0 }, grid()).unwrap();
        assert_eq!(choose_q_in(&zero, 0.4, 0.01).unwrap(), 0.4);
        for &(h, alpha) in &[(1.0, 0.5), (0.2, 0.3), (5.0, 0.9)] {
            let m = holder(h, alpha);
            let q = choose_q_in(&m, 0.4, 0.01).unwrap();
            let expect = (0.01f64 / h).powf(1.0 / alpha).min(0.4);
            let step = grid()[1] / grid()[0];
            assert!(q <= expect * (1.0 + 1e-12) && q >= expect / step, "{q} vs {expect}");
        }
        let c = Modulus::closed(ClosedForm::Constant { c: 0.02 }, grid()).unwrap();
        assert!(matches!(choose_q_in(&c, 0.4, 0.01), Err(Error::NoAdmissibleQin(_))));
    }

    #[test]
    fn e_values() {
        let consts = BoundConstants::default();
        let zero = Modulus::closed(ClosedForm::Constant { c: 0.0 }, grid()).unwrap();
        assert_eq!(eval_e(&zero, 0.01, 0.3, &consts).unwrap(), (1.0, 1.0));
        let (h, alpha, rho) = (0.5, 0.5, 0.4);
        let m = holder(h, alpha);
        let q_in = choose_q_in(&m, rho, consts.c_mc).unwrap();
        let (e_d, e_0) = eval_e(&m, 1e-6, q_in, &consts).unwrap();
        let cap = (consts.beta / alpha * consts.c_mc.min(h * rho.powf(alpha))).exp();
        assert!(e_d <= e_0 && e_0 <= cap * (1.0 + 1e-12));
        let s = 0.7;
        let l = Modulus::closed(ClosedForm::Log { s: s / consts.beta, a: 1.0 }, grid()).unwrap();
        let (d, q_in) = (1e-5, 0.1);
        let (e_d, _) = eval_e(&l, d, q_in, &consts).unwrap();
        let exact = ((consts.c_bar * d).ln().abs() / q_in.ln().abs()).powf(s);
        assert!((e_d - exact).abs() <= 1e-4 * exact);
        assert!(matches!(eval_e(&l, 0.1, 0.1, &consts), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_modulus_bound_is_linear() {
        let consts = BoundConstants::default();
        let zero = Modulus::closed(ClosedForm::Constant { c: 0.0 }, grid()).unwrap();
        for &d in &[1e-4, 1e-3, 1e-2] {
            let r = eval_theorem_bounds(&zero, d, &consts, 1.0, 0.4).unwrap();
            assert!(r.small_branch);
            assert!((r.hessian_difference.small - r.q_in_value * d).abs() <= 1e-12 * r.q_in_value * d);
        }
    }

    #[test]
    fn holder_evaluation_is_dominated_by_assembled_form() {
        let consts = BoundConstants::default();
        for &(h, alpha) in &[(0.02, 0.5), (0.05, 0.3), (0.01, 0.7)] {
            let m = holder(h, alpha);
            for &d in &[1e-5, 3e-5, 1e-4] {
                if consts.c_bar * d >= choose_q_in(&m, 0.4, consts.c_mc).unwrap() {
                    continue;
                }
                let r = eval_theorem_bounds(&m, d, &consts, 1.0, 0.4).unwrap();
                if !r.small_branch {
                    continue;
                }
                let hb = r.holder.as_ref().unwrap();
                let lhs = r.hessian_difference.small / d.powf(alpha);
                assert!(lhs <= hb.assembled * (1.0 + 1e-12), "{lhs} > {}", hb.assembled);
            }
        }
    }

    #[test]
    fn corollary_formula() {
        let consts = BoundConstants::default();
        let (a, b) = holder_corollary(1e-12, 0.5, &consts).unwrap();
        assert!((a - consts.cor_tilde).abs() < 1e-6 && (b - consts.cor_tilde).abs() < 1e-6);
        let alpha = 0.4;
        let (h1, h2) = (1e6, 1.001e6);
        let slope =
            (holder_corollary(h2, alpha, &consts).unwrap().1.ln() - holder_corollary(h1, alpha, &consts).unwrap().1.ln()) / (h2 / h1).ln();
        assert!((slope - consts.cor_hat / alpha).abs() < 1e-3);
        let (d2, d2h) = holder_corollary(1e3, 0.5, &consts).unwrap();
        assert!(d2h / d2 >= 4.0 * (1.0 - 1e-6));
        assert!(matches!(holder_corollary(1.0, 1.0, &consts), Err(Error::Domain(_))));
    }

    #[test]
    fn gamma_ranges() {
        let consts = BoundConstants::default();
        let b2 = consts.beta2();
        let zero = holder(1.0, 0.5);
        let g = gamma_range(&zero, &consts).unwrap();
        assert_eq!((g.lo, g.hi), (0.0, 1.0));
        let limit = consts.c_mc.min(1.0 / b2);
        let half = Modulus::closed(ClosedForm::Constant { c: 0.5 * limit }, grid()).unwrap();
        let g = gamma_range(&half, &consts).unwrap();
        assert!((g.lo - 0.5 * limit * b2).abs() < 1e-15 && g.closed_left);
        let over = Modulus::closed(ClosedForm::Constant { c: 2.0 * limit }, grid()).unwrap();
        assert!(matches!(gamma_range(&over, &consts), Err(Error::NoAdmissibleGamma(_))));
        let mixed = Modulus::from_table(grid(), grid().iter().map(|q| 0.3 * limit + 0.1 * limit / (-q.ln()).max(1.0)).collect()).unwrap();
        let g = gamma_range(&mixed, &consts).unwrap();
        assert!(!g.closed_left);
    }

    #[test]
    fn log_examples() {
        let consts = BoundConstants::default();
        let s = 0.8;
        let m = Modulus::closed(ClosedForm::Log { s: s / consts.beta, a: 1.0 }, grid()).unwrap();
        let ex1 = LogExample::Example1 { eps: 0.1, q_in: 0.05, d_bars: vec![1e-3, 1e-5, 1e-8] };
        match eval_log_moduli(&m, &ex1, &consts).unwrap() {
            LogBound::Example1 { sigma0, ratios, .. } => {
                assert!((sigma0 - s).abs() < 1e-12);
                assert!(ratios.windows(2).all(|w| w[1].2 <= w[0].2 * 1.5));
            }
            _ => unreachable!(),
        }
        let zero = Modulus::closed(ClosedForm::Constant { c: 0.0 }, grid()).unwrap();
        match eval_log_moduli(&zero, &ex1, &consts).unwrap() {
            LogBound::Example1 { sigma0, .. } => assert_eq!(sigma0, 0.0),
            _ => unreachable!(),
        }
        let l2 = Modulus::closed(ClosedForm::Log { s: 0.1, a: 2.0 }, grid()).unwrap();
        let ex2 = LogExample::Example2 { a: 2.0, q_in: (-4.0f64).exp(), d_bar: 1e-6 };
        match eval_log_moduli(&l2, &ex2, &consts).unwrap() {
            LogBound::Example2 { identity_error, remainder_ratio, .. } => {
                assert!(identity_error < 1e-6);
                assert!(remainder_ratio <= 0.5);
            }
            _ => unreachable!(),
        }
        let c = Modulus::closed(ClosedForm::Constant { c: 0.1 }, grid()).unwrap();
        assert!(matches!(eval_log_moduli(&c, &ex2, &consts), Err(Error::Domain(_))));
    }

    #[test]
    fn sampled_moduli() {
        let g = Grid::covering([0.0, 0.0], [1.0, 0.25], 401).unwrap();
        let k = ScalarField::from_fn(g, |_| 3.0, |_| true).unwrap();
        let m = estimate_modulus(&k, &log_grid(1e-3, 1.0, 20), 1).unwrap();
        assert!(m.omega().iter().all(|&w| w == 0.0));

        let (h, alpha) = (1.5, 0.5);
        let f = ScalarField::from_fn(g, |p| h * p[0].powf(alpha), |_| true).unwrap();
        let q = log_grid(0.025, 0.25, 8);
        let m = estimate_modulus(&f, &q, 2).unwrap();
        for (q, w) in m.q().iter().zip(m.omega()) {
            let exact = h * q.powf(alpha);
            assert!((w - exact).abs() <= 0.05 * exact, "q = {q}: {w} vs {exact}");
        }

        let lip = 2.0;
        let d = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let s = Region::new(d).inset(0.1).sample(|p| lip * (p[0] + 0.5 * p[1].sin()) / 1.25f64.sqrt(), 129).unwrap();
        let m = estimate_modulus(&s, &log_grid(0.01, 2.0, 15), 3).unwrap();
        for (q, w) in m.q().iter().zip(m.omega()) {
            assert!(*w <= lip * q * 1.0001);
        }
        assert_eq!(m.census().unwrap().random_pairs, RANDOM_PAIRS);
    }

    #[test]
    fn anchored_modulus_dominates_the_oscillation_about_the_anchor() {
        // Sharp cusp at an off-lattice point: random pairs almost never touch it.
        let a = [0.1037, -0.0411];
        let cusp = move |p: [f64; 2]| 1.0 + 0.01 * ((p[0] - a[0]).hypot(p[1] - a[1]) + 1e-12).powf(0.1);
        let g = Grid::covering([-0.5, -0.5], [0.5, 0.5], 101).unwrap();
        let s = ScalarField::from_fn(g, cusp, |_| true).unwrap();
        let q = log_grid(g.spacing, 1.0, 16);
        let m = estimate_modulus_about(&s, &q, 4, a, cusp(a)).unwrap();
        for (_, p, v) in s.valid_nodes() {
            let d = (p[0] - a[0]).hypot(p[1] - a[1]).max(g.spacing);
            assert!((v - cusp(a)).abs() <= m.eval_upper(d) * (1.0 + 1e-12), "{p:?}");
        }
        assert_eq!(m.census().unwrap().star_pairs, s.valid_count());
    }

    proptest! {
        #[test]
        fn bounds_are_monotone_in_omega(h in 0.001f64..0.05, alpha in 0.2f64..0.9, factor in 1.0f64..3.0, d in 1e-5f64..1e-2) {
            let consts = BoundConstants::default();
            let q = log_grid(1e-6, 1.0, 61);
            let m = Modulus::from_table(q.clone(), q.iter().map(|s| h * s.powf(alpha)).collect()).unwrap();
            let big = m.scaled(factor).unwrap();
            let q_in = 0.2;
            let a = eval_theorem_bounds_at(&m, d, q_in, &consts, 1.0, 0.4).unwrap();
            let b = eval_theorem_bounds_at(&big, d, q_in, &consts, 1.0, 0.4).unwrap();
            let pairs = [
                (a.e_d, b.e_d), (a.e_0, b.e_0), (a.dini_first, b.dini_first), (a.dini_second, b.dini_second),
                (a.gradient.small, b.gradient.small), (a.gradient.active, b.gradient.active), (a.hessian, b.hessian),
                (a.hessian_difference.small, b.hessian_difference.small), (a.hessian_difference.active, b.hessian_difference.active),
            ];
            for (x, y) in pairs {
                prop_assert!(y >= x * (1.0 - 1e-12), "{x} > {y}");
            }
        }

        #[test]
        fn e_is_at_least_one_and_nonincreasing(h in 0.001f64..0.05, alpha in 0.2f64..0.9, d in 1e-6f64..1e-2) {
            let consts = BoundConstants::default();
            let m = holder(h, alpha);
            let (e1, _) = eval_e(&m, d, 0.2, &consts).unwrap();
            let (e2, _) = eval_e(&m, 2.0 * d, 0.2, &consts).unwrap();
            prop_assert!(e1 >= 1.0 && e2 >= 1.0 && e2 <= e1);
        }

        #[test]
        fn envelope_is_monotone(raw in proptest::collection::vec(0.0f64..1.0, 2..30)) {
            let q = log_grid(1e-3, 1.0, raw.len());
            let m = Modulus::from_table(q, raw).unwrap();
            prop_assert!(m.omega().windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
