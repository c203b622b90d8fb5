//! Python bindings. Models travel as model-JSON strings, matrices as nested
//! lists, structured results as JSON strings.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use preview_gain::lifting;
use preview_gain::model::{unicycle_model as build_unicycle, UnicycleParams};
use preview_gain::riccati::{self, PeriodicOptions};
use preview_gain::sim::{self, PowerOptions};
use preview_gain::synthesis::{self, ScheduleConfig};
use preview_gain::{spd, Error, ModelProvider, SpdMatrix};

fn py_err(e: Error) -> PyErr {
    if e.is_feasibility() || matches!(e, Error::NonConvergence { .. }) {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn model(json: &str) -> PyResult<ModelProvider> {
    ModelProvider::from_json(json).map_err(py_err)
}

fn to_json(v: &impl serde::Serialize) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    preview_gain::linalg::from_rows(&rows, "matrix").map_err(py_err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    preview_gain::linalg::to_rows(m)
}

/// Model JSON of the lemniscate unicycle.
#[pyfunction]
#[pyo3(signature = (a = 1.0, period = 400, h = 0.05))]
fn unicycle_model(a: f64, period: usize, h: f64) -> PyResult<String> {
    build_unicycle(&UnicycleParams {
        a,
        period,
        h,
        ..Default::default()
    })
    .and_then(|m| m.to_json())
    .map_err(py_err)
}

/// Preview certificate as JSON over one period (or `window = (start, len)`).
#[pyfunction]
#[pyo3(signature = (model_json, d, gamma, beta, window = None))]
fn certificate(
    model_json: &str,
    d: usize,
    gamma: f64,
    beta: f64,
    window: Option<(usize, usize)>,
) -> PyResult<String> {
    let m = model(model_json)?;
    let w = window.map(|(s, l)| preview_gain::model::Window::finite(s, l));
    to_json(&lifting::certificate(&m, d, gamma, beta, w).map_err(py_err)?)
}

/// Periodic Riccati solution summary as JSON, including every `P_t`.
#[pyfunction]
fn solve_periodic(model_json: &str, gamma: f64) -> PyResult<String> {
    let m = model(model_json)?;
    to_json(&riccati::solve_periodic(&m, gamma, &PeriodicOptions::default()).map_err(py_err)?)
}

/// Finite-preview gains `K_t` for `t ∈ [start, start + len)`.
#[pyfunction]
#[pyo3(signature = (model_json, d, horizon, gamma, beta, start = 0, len = 1))]
fn gain_schedule(
    model_json: &str,
    d: usize,
    horizon: usize,
    gamma: f64,
    beta: f64,
    start: usize,
    len: usize,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let m = model(model_json)?;
    let cfg = ScheduleConfig::new(d, horizon, gamma, beta);
    let sched =
        synthesis::gain_schedule(&m, start..start + len, &cfg, None, None).map_err(py_err)?;
    Ok(sched.rows.iter().map(|r| rows(&r.gain)).collect())
}

/// Infinite-preview gains `K_{γ,t}(P_{t+1})` for `t ∈ [0, len)`.
#[pyfunction]
fn baseline_gains(model_json: &str, gamma: f64, len: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let m = model(model_json)?;
    let sol = riccati::solve_periodic(&m, gamma, &PeriodicOptions::default()).map_err(py_err)?;
    let ks = synthesis::baseline_gains(&m, &sol, 0..len).map_err(py_err)?;
    Ok(ks.iter().map(rows).collect())
}

/// Largest singular value of the closed loop over `horizon` steps, with
/// its iteration count and convergence flag.
#[pyfunction]
#[pyo3(signature = (model_json, gains, horizon, seed = 0))]
fn empirical_gain(
    model_json: &str,
    gains: Vec<Vec<Vec<f64>>>,
    horizon: usize,
    seed: u64,
) -> PyResult<(f64, usize, bool)> {
    let m = model(model_json)?;
    let ks = gains
        .into_iter()
        .map(matrix)
        .collect::<PyResult<Vec<_>>>()?;
    let est = sim::empirical_gain(
        &m,
        &ks,
        horizon,
        &PowerOptions {
            seed,
            ..Default::default()
        },
    )
    .map_err(py_err)?;
    Ok((est.gain, est.iterations, est.converged))
}

/// `δ(X, P) = ‖log eig(XP⁻¹)‖₂` for SPD `X`, `P`.
#[pyfunction]
fn riemannian_distance(x: Vec<Vec<f64>>, p: Vec<Vec<f64>>) -> PyResult<f64> {
    let x = SpdMatrix::new(matrix(x)?).map_err(py_err)?;
    let p = SpdMatrix::new(matrix(p)?).map_err(py_err)?;
    spd::riemannian_distance(&x, &p).map_err(py_err)
}

#[pymodule]
fn preview_gain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(unicycle_model, m)?)?;
    m.add_function(wrap_pyfunction!(certificate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_periodic, m)?)?;
    m.add_function(wrap_pyfunction!(gain_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_gains, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_gain, m)?)?;
    m.add_function(wrap_pyfunction!(riemannian_distance, m)?)?;
    Ok(())
}
