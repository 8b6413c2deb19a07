//! Python module `onebit`: the scalar theory, the Fisher-information bound, the
//! separability threshold, finite-n replicates and the loss proximal operators.
//!
//! Results come back as plain dicts; failures of the theory solve are reported
//! in a `status` entry, like the command-line records, while invalid arguments
//! raise `ValueError`.

use onebit_core::{
    analytic_noiseless_bound, correlation_upper_bound, predicted_correlation, run_replicates,
    separability_threshold, solve_ao_saddle, solve_fixed_point, Channel, EngineConfig, Error,
    ExpectationEngine, Loss, SolverConfig,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Parse(_) | Error::Capability { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_loss(name: &str) -> PyResult<Loss> {
    name.parse().map_err(|e: Error| PyValueError::new_err(format!("unknown loss {name:?}: {e}")))
}

fn engine(nodes: usize) -> PyResult<ExpectationEngine> {
    ExpectationEngine::new(EngineConfig::gauss_hermite(nodes)).map_err(to_py)
}

fn status(e: &Error) -> &'static str {
    match e {
        Error::Unbounded(_) => "unbounded",
        Error::Diverged { .. } => "diverged",
        _ => "error",
    }
}

/// Solve the scalar system for one cell.
///
/// Returns a dict with `status` ("ok", "unbounded", "diverged" or "error") and,
/// when ok, `mu`, `alpha`, `lambda`, `residual_norm`, `iterations` and `corr`.
#[pyfunction]
#[pyo3(signature = (loss, delta, eps, r = 0.0, nodes = 128, solver = "fp"))]
fn theory<'py>(
    py: Python<'py>,
    loss: &str,
    delta: f64,
    eps: f64,
    r: f64,
    nodes: usize,
    solver: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let loss = parse_loss(loss)?;
    let channel = Channel::bsc(eps).map_err(to_py)?;
    let engine = engine(nodes)?;
    let result = py.allow_threads(|| match solver {
        "fp" => Ok(solve_fixed_point(&loss, &channel, delta, r, &engine, &Default::default())),
        "ao" => Ok(solve_ao_saddle(&loss, &channel, delta, r, &engine, &Default::default())),
        other => Err(PyValueError::new_err(format!("solver must be \"fp\" or \"ao\", got {other:?}"))),
    })?;
    let out = PyDict::new_bound(py);
    out.set_item("loss", loss.to_string())?;
    out.set_item("delta", delta)?;
    out.set_item("eps", eps)?;
    out.set_item("r", r)?;
    match result {
        Ok(sol) => {
            out.set_item("status", "ok")?;
            out.set_item("mu", sol.mu)?;
            out.set_item("alpha", sol.alpha)?;
            out.set_item("lambda", sol.lambda)?;
            out.set_item("residual_norm", sol.residual_norm)?;
            out.set_item("iterations", sol.iterations)?;
            out.set_item("corr", predicted_correlation(&sol).value)?;
        }
        Err(Error::Domain(msg)) => return Err(PyValueError::new_err(msg)),
        Err(e) => {
            out.set_item("status", status(&e))?;
            out.set_item("message", e.to_string())?;
        }
    }
    Ok(out)
}

/// Upper bound on the correlation of any convex loss: `sigma_min`, `corr_upper`
/// and, at `eps = 0`, the closed-form `analytic_corr_upper`.
#[pyfunction]
fn bound(py: Python<'_>, delta: f64, eps: f64) -> PyResult<Bound<'_, PyDict>> {
    let b = py.allow_threads(|| correlation_upper_bound(delta, eps)).map_err(to_py)?;
    let out = PyDict::new_bound(py);
    out.set_item("sigma_min", b.sigma_min)?;
    out.set_item("corr_upper", b.corr_upper)?;
    let analytic = if eps == 0.0 {
        Some(analytic_noiseless_bound(delta).map_err(to_py)?.corr_upper)
    } else {
        None
    };
    out.set_item("analytic_corr_upper", analytic)?;
    Ok(out)
}

/// Separability threshold `delta*(eps)`; `inf` at `eps = 0`.
#[pyfunction]
#[pyo3(signature = (eps, nodes = 128))]
fn threshold(py: Python<'_>, eps: f64, nodes: usize) -> PyResult<f64> {
    let engine = engine(nodes)?;
    py.allow_threads(|| separability_threshold(eps, &engine))
        .map(|t| t.value)
        .map_err(to_py)
}

/// Fit `trials` independent instances; replicate k uses seed `seed + k`.
#[pyfunction]
#[pyo3(signature = (loss, n, delta, eps, trials = 25, seed = 1, r = 0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    loss: &str,
    n: usize,
    delta: f64,
    eps: f64,
    trials: usize,
    seed: u64,
    r: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let loss = parse_loss(loss)?;
    let s = py
        .allow_threads(|| run_replicates(&loss, n, delta, eps, r, trials, seed, &SolverConfig::default()))
        .map_err(to_py)?;
    let out = PyDict::new_bound(py);
    out.set_item("mean_corr", s.mean_correlation)?;
    out.set_item("std_corr", s.std_correlation)?;
    out.set_item("converged", s.converged)?;
    out.set_item("max_iter", s.max_iter)?;
    out.set_item("unbounded", s.unbounded)?;
    out.set_item("failed", s.failed)?;
    let corrs: Vec<Option<f64>> = s.outcomes.iter().map(|o| o.correlation).collect();
    out.set_item("correlations", corrs)?;
    Ok(out)
}

/// `prox_{lam * loss}(x)`.
#[pyfunction]
fn prox(loss: &str, x: f64, lam: f64) -> PyResult<f64> {
    parse_loss(loss)?.prox(x, lam).map_err(to_py)
}

/// Moreau envelope at `(x, lam)`: `(value, d/dx, d/dlam, prox point)`.
#[pyfunction]
fn envelope(loss: &str, x: f64, lam: f64) -> PyResult<(f64, f64, f64, f64)> {
    let e = parse_loss(loss)?.moreau_env(x, lam).map_err(to_py)?;
    Ok((e.env_value, e.env_dx, e.env_dlambda, e.prox_point))
}

#[pymodule]
fn onebit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", onebit_core::VERSION)?;
    m.add_function(wrap_pyfunction!(theory, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(prox, m)?)?;
    m.add_function(wrap_pyfunction!(envelope, m)?)?;
    Ok(())
}
