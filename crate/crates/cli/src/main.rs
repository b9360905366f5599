use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use malab_core::bounds::{estimate_modulus, eval_theorem_bounds, gamma_range, log_grid, BoundConstants, Modulus, Region};
use malab_core::experiments::{
    discontinuous_pipeline, mollify, powerlaw_experiment, DomainSpec, ExperimentSpec, Family, PipelineConfig, PowerlawSpec, Sampler,
};
use malab_core::field::ScalarField;
use malab_core::io::{field_csv, modulus_from_csv, section_sidecar, stamped_json, write_field};
use malab_core::iteration::{run_chain, ChainConfig, SectionChain};
use malab_core::sections::{extract_section, first_section_height};
use malab_core::solver::{grid_for, solve_on, SolveReport, SolverConfig};
use malab_core::verify::{run_all, run_criterion};
use malab_core::{Error, Result};

/// Numerical lab for interior regularity of det^{1/2} D²v = f.
#[derive(Parser)]
#[command(name = "malab", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Nodes along the longer side of the domain's bounding box.
    #[arg(long, global = true, default_value_t = 129)]
    grid: usize,
    #[arg(long, global = true, default_value_t = 0.4)]
    rho: f64,
    /// JSON constants block; missing fields take their defaults.
    #[arg(long, global = true)]
    constants: Option<PathBuf>,
    /// Directory receiving output files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Problem {
    /// disk[:r], ellipse:a,b[,angle], square[:half], polygon:x,y;x,y;... or random:seed
    #[arg(long, default_value = "disk")]
    domain: String,
    /// Right-hand side: an expression in x and y, or constant:C, holder:H,alpha[,x0,y0],
    /// step:jump[,n1,n2,offset], radial:s,a
    #[arg(long, default_value = "1")]
    f: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve det^{1/2} D²v = f with v = 0 on the boundary.
    Solve(Problem),
    /// Extract the section S(v, h, x); h defaults to the first height reaching distance ρ.
    Section {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, value_parser = point, default_value = "0,0")]
        x: [f64; 2],
        #[arg(long)]
        height: Option<f64>,
    },
    /// Run the normalized section chain at x.
    Chain {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, value_parser = point, default_value = "0,0")]
        x: [f64; 2],
        #[arg(long, default_value_t = 6)]
        k_max: usize,
    },
    /// Evaluate the theorem bounds for a modulus of continuity.
    Bounds {
        /// Two-column CSV (q, omega).
        #[arg(long, conflicts_with = "family")]
        modulus: Option<PathBuf>,
        /// Family with a closed-form modulus (holder, step, radial, constant).
        #[arg(long, default_value = "holder:1,0.5")]
        family: String,
        #[arg(long, default_value_t = 1e-6)]
        d_bar: f64,
        #[arg(long, default_value_t = 2.0)]
        f_max: f64,
    },
    /// Sweep f = 1 + H|x − x0|^alpha over H; writes CSV and SVG.
    Powerlaw {
        #[arg(long, default_value = "disk")]
        domain: String,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long = "H", value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0])]
        hs: Vec<f64>,
        #[arg(long, value_parser = point, default_value = "0,0")]
        center: [f64; 2],
    },
    /// Mollify f with index i; with several indices and --gamma, run the weak-solution pipeline.
    Mollify {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, value_delimiter = ',', default_values_t = [8usize])]
        i: Vec<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run the acceptance suite; exits 4 if any criterion fails.
    Verify {
        /// Run only these criteria (1 to 9).
        #[arg(long, value_delimiter = ',')]
        criterion: Vec<u8>,
    },
}

fn point(s: &str) -> std::result::Result<[f64; 2], String> {
    let v: Vec<f64> =
        s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(format!("expected x,y, got {s:?}")),
    }
}

enum Outcome {
    Done,
    VerifyFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Ctx {
    g: Global,
    constants: BoundConstants,
}

impl Ctx {
    fn solver(&self) -> SolverConfig {
        SolverConfig { grid: self.g.grid, ..Default::default() }
    }

    fn spec(&self, p: &Problem) -> Result<ExperimentSpec> {
        Ok(ExperimentSpec {
            domain: DomainSpec::parse(&p.domain)?,
            f: Family::parse(&p.f)?,
            grid: self.g.grid,
            rho: self.g.rho,
            constants: self.constants.clone(),
            seed: self.g.seed,
        })
    }

    /// Prints the document in the selected format and saves it under `--out`.
    fn emit(&self, name: &str, json: &str, csv: &str) -> Result<()> {
        let (text, ext) = match self.g.format {
            Format::Json => (json, "json"),
            Format::Csv => (csv, "csv"),
        };
        let mut out = std::io::stdout().lock();
        let written = out.write_all(text.as_bytes()).and_then(|_| if text.ends_with('\n') { Ok(()) } else { out.write_all(b"\n") });
        match written {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
            _ => {}
        }
        if let Some(dir) = &self.g.out {
            write_file(dir, &format!("{name}.{ext}"), text.as_bytes())?;
        }
        Ok(())
    }

    fn stamped<T: Serialize>(&self, kind: &str, data: &T) -> Result<String> {
        stamped_json(kind, self.g.seed, data)
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    let constants = match &cli.global.constants {
        Some(path) => serde_json::from_str::<BoundConstants>(&std::fs::read_to_string(path)?)?,
        None => BoundConstants::default(),
    };
    constants.validate()?;
    let ctx = Ctx { g: cli.global, constants };
    match cli.cmd {
        Cmd::Solve(p) => solve_cmd(&ctx, &p)?,
        Cmd::Section { problem, x, height } => section_cmd(&ctx, &problem, x, height)?,
        Cmd::Chain { problem, x, k_max } => chain_cmd(&ctx, &problem, x, k_max)?,
        Cmd::Bounds { modulus, family, d_bar, f_max } => bounds_cmd(&ctx, modulus.as_deref(), &family, d_bar, f_max)?,
        Cmd::Powerlaw { domain, alpha, hs, center } => powerlaw_cmd(&ctx, &domain, alpha, hs, center)?,
        Cmd::Mollify { problem, i, gamma } => mollify_cmd(&ctx, &problem, &i, gamma)?,
        Cmd::Verify { criterion } => return verify_cmd(&ctx, &criterion),
    }
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct SolveDoc<'a> {
    spec: &'a ExperimentSpec,
    /// f was multiplied by this factor to reach f ≥ 1.
    f_scale: f64,
    report: SolveReport,
}

#[derive(Serialize)]
struct ChainDoc<'a> {
    f_scale: f64,
    /// M_k for k = 0..=K+1.
    compounds: Vec<f64>,
    chain: &'a SectionChain,
}

struct Solved {
    spec: ExperimentSpec,
    f_scale: f64,
    f: Sampler,
    v: ScalarField,
    report: SolveReport,
}

fn solve_problem(ctx: &Ctx, p: &Problem) -> Result<Solved> {
    let spec = ctx.spec(p)?;
    let domain = spec.validate()?;
    let (f_scale, f) = spec.rhs(&domain)?;
    let (v, report) = solve_on(&domain, &grid_for(&domain, spec.grid)?, &*f, &|_| 0.0, &ctx.solver())?;
    Ok(Solved { spec, f_scale, f, v, report })
}

fn solve_cmd(ctx: &Ctx, p: &Problem) -> Result<()> {
    let s = solve_problem(ctx, p)?;
    if let Some(dir) = &ctx.g.out {
        let mut bytes = Vec::new();
        write_field(&s.v, &mut bytes)?;
        write_file(dir, "solution.malf", &bytes)?;
    }
    let doc = SolveDoc { spec: &s.spec, f_scale: s.f_scale, report: s.report };
    ctx.emit("solve", &ctx.stamped("solve", &doc)?, &field_csv(&s.v))
}

fn section_cmd(ctx: &Ctx, p: &Problem, x: [f64; 2], height: Option<f64>) -> Result<()> {
    let v = solve_problem(ctx, p)?.v;
    let h = match height {
        Some(h) => h,
        None => first_section_height(&v, x, ctx.g.rho)?,
    };
    let s = extract_section(&v, x, h)?;
    if let Some(dir) = &ctx.g.out {
        write_file(dir, "section.txt", s.boundary.to_text().as_bytes())?;
    }
    let mut csv = String::from("x,y\n");
    for q in s.boundary.vertices_2d() {
        let _ = writeln!(csv, "{},{}", q[0], q[1]);
    }
    ctx.emit("section", &section_sidecar(&s)?, &csv)
}

fn chain_cmd(ctx: &Ctx, p: &Problem, x: [f64; 2], k_max: usize) -> Result<()> {
    let s = solve_problem(ctx, p)?;
    let cfg = ChainConfig { constants: ctx.constants.clone(), k_max, solver: ctx.solver(), seed: ctx.g.seed, ..Default::default() };
    let ch = run_chain(&s.v, &*s.f, x, ctx.g.rho, &cfg)?;
    let mut csv = String::from("k,height,delta,M_k,ecc,norm_p,norm_inv_p,diameter,dk_bound\n");
    for s in &ch.steps {
        let _ =
            writeln!(csv, "{},{},{},{},{},{},{},{},{}", s.k, s.height, s.delta, s.m, s.ecc, s.norm_p, s.norm_inv_p, s.diameter, s.dk_bound);
    }
    let doc = ChainDoc { f_scale: s.f_scale, compounds: ch.compounds(), chain: &ch };
    ctx.emit("chain", &ctx.stamped("chain", &doc)?, &csv)
}

fn bounds_cmd(ctx: &Ctx, modulus: Option<&Path>, family: &str, d_bar: f64, f_max: f64) -> Result<()> {
    let m = match modulus {
        Some(path) => modulus_from_csv(&std::fs::read_to_string(path)?)?,
        None => {
            let fam = Family::parse(family)?;
            let form = fam.closed_form().ok_or_else(|| Error::Domain(format!("{family:?} has no closed-form modulus; pass --modulus")))?;
            Modulus::closed(form, log_grid(1e-8, 2.0, 80))?
        }
    };
    let mut r = eval_theorem_bounds(&m, d_bar, &ctx.constants, f_max, ctx.g.rho)?;
    if r.gamma.is_none() {
        r.gamma = gamma_range(&m, &ctx.constants).ok();
    }
    let rows = [
        ("q_in", r.q_in),
        ("q_in_value", r.q_in_value),
        ("e_d", r.e_d),
        ("e_0", r.e_0),
        ("gradient_small", r.gradient.small),
        ("gradient_large", r.gradient.large),
        ("hessian", r.hessian),
        ("hessian_difference_small", r.hessian_difference.small),
        ("hessian_difference_large", r.hessian_difference.large),
    ];
    let mut csv = String::from("quantity,value\n");
    for (k, val) in rows {
        let _ = writeln!(csv, "{k},{val}");
    }
    ctx.emit("bounds", &ctx.stamped("bounds", &r)?, &csv)
}

fn powerlaw_cmd(ctx: &Ctx, domain: &str, alpha: f64, hs: Vec<f64>, center: [f64; 2]) -> Result<()> {
    let spec = PowerlawSpec {
        domain: DomainSpec::parse(domain)?,
        alpha,
        hs,
        center,
        rho: ctx.g.rho,
        grid: ctx.g.grid,
        constants: ctx.constants.clone(),
        solver: ctx.solver(),
        seed: ctx.g.seed,
    };
    let rep = powerlaw_experiment(&spec)?;
    let dir = ctx.g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    write_file(&dir, "powerlaw.svg", rep.to_svg()?.as_bytes())?;
    ctx.emit("powerlaw", &ctx.stamped("powerlaw", &rep)?, &rep.to_csv())?;
    match rep.failure {
        Some(msg) => Err(Error::Divergence(format!("sweep stopped after {} rows: {msg}", rep.rows.len()))),
        None => Ok(()),
    }
}

fn mollify_cmd(ctx: &Ctx, p: &Problem, indices: &[usize], gamma: Option<f64>) -> Result<()> {
    let spec = ctx.spec(p)?;
    let domain = spec.validate()?;
    let (_, f) = spec.rhs(&domain)?;
    let Some(gamma) = gamma else {
        let [i] = indices else {
            return Err(Error::Domain("several indices need --gamma for the pipeline".into()));
        };
        let m = mollify(&*f, &domain, &grid_for(&domain, spec.grid)?, *i, ctx.g.rho, ctx.g.seed)?;
        if let Some(dir) = &ctx.g.out {
            let mut bytes = Vec::new();
            write_field(&m.field, &mut bytes)?;
            write_file(dir, "mollified.malf", &bytes)?;
        }
        return ctx.emit("mollify", &ctx.stamped("mollify", &m.diagnostics)?, &field_csv(&m.field));
    };
    let modulus = match spec.f.closed_form() {
        Some(form) => Modulus::closed(form, log_grid(1e-6, 2.0, 60))?,
        None => {
            let samples = Region::new(domain.clone()).sample(&*f, spec.grid)?;
            estimate_modulus(&samples, &log_grid(2.0 / spec.grid as f64, 2.0, 30), ctx.g.seed)?
        }
    };
    let cfg = PipelineConfig {
        indices: indices.to_vec(),
        gamma,
        rho: ctx.g.rho,
        grid: spec.grid,
        constants: ctx.constants.clone(),
        solver: ctx.solver(),
        seed: ctx.g.seed,
    };
    let rep = discontinuous_pipeline(&*f, &modulus, &domain, &cfg)?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let mut csv = String::from("i,seminorm,min_value,sup_diff_prev,cond1_ok,cond2_ok\n");
    for r in &rep.rows {
        let prev = r.sup_diff_prev.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.i, r.seminorm, r.min_value, prev, r.mollify.cond1_ok, r.mollify.cond2_ok);
    }
    ctx.emit("pipeline", &ctx.stamped("pipeline", &rep)?, &csv)
}

fn verify_cmd(ctx: &Ctx, ids: &[u8]) -> Result<Outcome> {
    let results = if ids.is_empty() {
        run_all(|r| eprintln!("{}", r.line()))
    } else {
        ids.iter()
            .map(|&id| {
                let r = run_criterion(id)?;
                eprintln!("{}", r.line());
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut csv = String::from("criterion,pass,seconds,detail\n");
    for r in &results {
        let _ = writeln!(csv, "{},{},{:.1},\"{}\"", r.id, r.pass, r.seconds, r.detail.replace('"', "'"));
    }
    ctx.emit("verify", &ctx.stamped("verify", &results)?, &csv)?;
    Ok(if results.iter().all(|r| r.pass) { Outcome::Done } else { Outcome::VerifyFailed })
}
