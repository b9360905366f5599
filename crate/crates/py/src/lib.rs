//! Python bindings. Results come back as plain dicts mirroring the JSON documents of the CLI.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList, PyString};
use serde::Serialize;
use serde_json::Value;

use malab_core::bounds::{eval_theorem_bounds, log_grid, BoundConstants, Modulus};
use malab_core::experiments::{DomainSpec, ExperimentSpec, Family};
use malab_core::expr::Expr;
use malab_core::iteration::{run_chain, ChainConfig};
use malab_core::solver::{grid_for, solve_on, SolverConfig};
use malab_core::verify::run_criterion;
use malab_core::Error;

fn err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(a) => PyList::new(py, a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?)?.into_any(),
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn doc<'py, T: Serialize>(py: Python<'py>, data: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(data).map_err(|e| err(e.into()))?)
}

fn spec(domain: &str, f: &str, grid: usize, rho: f64) -> Result<ExperimentSpec, Error> {
    Ok(ExperimentSpec {
        domain: DomainSpec::parse(domain)?,
        f: Family::parse(f)?,
        grid,
        rho,
        constants: BoundConstants::default(),
        seed: 0,
    })
}

/// Evaluates an expression in x and y at one point.
#[pyfunction]
fn eval_expr(src: &str, x: f64, y: f64) -> PyResult<f64> {
    Ok(Expr::parse(src).map_err(err)?.eval([x, y]))
}

/// Solves det^{1/2} D²v = f with zero boundary data; returns the solve report and the nodal values
/// (NaN outside the domain) as rows.
#[pyfunction]
#[pyo3(signature = (domain = "disk", f = "1", grid = 129))]
fn solve<'py>(py: Python<'py>, domain: &str, f: &str, grid: usize) -> PyResult<Bound<'py, PyAny>> {
    let s = spec(domain, f, grid, 0.1).map_err(err)?;
    let dom = s.validate().map_err(err)?;
    let (scale, rhs) = s.rhs(&dom).map_err(err)?;
    let (v, report) =
        solve_on(&dom, &grid_for(&dom, grid).map_err(err)?, &*rhs, &|_| 0.0, &SolverConfig { grid, ..Default::default() }).map_err(err)?;
    let g = v.grid();
    let rows: Vec<Vec<f64>> = (0..g.ny).map(|j| (0..g.nx).map(|i| v.at(i, j).unwrap_or(f64::NAN)).collect()).collect();
    let out = PyDict::new(py);
    out.set_item("report", doc(py, &report)?)?;
    out.set_item("f_scale", scale)?;
    out.set_item("origin", g.origin.to_vec())?;
    out.set_item("spacing", g.spacing)?;
    out.set_item("values", rows)?;
    Ok(out.into_any())
}

/// Runs the normalized section chain at x.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (f = "1", x = (0.0, 0.0), rho = 0.4, domain = "disk", grid = 129, k_max = 6, seed = 0))]
fn chain<'py>(
    py: Python<'py>,
    f: &str,
    x: (f64, f64),
    rho: f64,
    domain: &str,
    grid: usize,
    k_max: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let s = spec(domain, f, grid, rho).map_err(err)?;
    let dom = s.validate().map_err(err)?;
    let (_, rhs) = s.rhs(&dom).map_err(err)?;
    let solver = SolverConfig { grid, ..Default::default() };
    let (v, _) = solve_on(&dom, &grid_for(&dom, grid).map_err(err)?, &*rhs, &|_| 0.0, &solver).map_err(err)?;
    let cfg = ChainConfig { k_max, solver, seed, ..Default::default() };
    let ch = run_chain(&v, &*rhs, [x.0, x.1], rho, &cfg).map_err(err)?;
    let out = doc(py, &ch)?;
    out.set_item("compounds", ch.compounds())?;
    Ok(out)
}

/// Evaluates the theorem bounds for a family with a closed-form modulus.
#[pyfunction]
#[pyo3(signature = (family = "holder:1,0.5", d_bar = 1e-6, f_max = 2.0, rho = 0.4))]
fn bounds<'py>(py: Python<'py>, family: &str, d_bar: f64, f_max: f64, rho: f64) -> PyResult<Bound<'py, PyAny>> {
    let fam = Family::parse(family).map_err(err)?;
    let form = fam.closed_form().ok_or_else(|| PyValueError::new_err(format!("{family:?} has no closed-form modulus")))?;
    let m = Modulus::closed(form, log_grid(1e-8, 2.0, 80)).map_err(err)?;
    doc(py, &eval_theorem_bounds(&m, d_bar, &BoundConstants::default(), f_max, rho).map_err(err)?)
}

/// Runs one acceptance criterion (1 to 9).
#[pyfunction]
fn verify<'py>(py: Python<'py>, criterion: u8) -> PyResult<Bound<'py, PyAny>> {
    doc(py, &run_criterion(criterion).map_err(err)?)
}

#[pymodule]
fn malab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(eval_expr, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(chain, m)?)?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
