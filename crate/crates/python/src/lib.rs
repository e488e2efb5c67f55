//! Python bindings. Point sets are lists of equal-length float lists.

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use wgflow::datasets::{gen_gaussian, gen_s_shape};
use wgflow::flow::{impute as impute_rs, run_flow, FieldSource, FlowConfig, ImputeConfig, SigmaPolicy};
use wgflow::kernel::pooled_median_bandwidth;
use wgflow::selection::{default_candidates, select_bandwidth as select_rs, MEDIAN_POINTS};
use wgflow::{Divergence, FitOptions, GaussianScore, SampleSet};

type Rows = Vec<Vec<f64>>;

fn err(e: wgflow::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn set(rows: &[Vec<f64>]) -> PyResult<SampleSet> {
    SampleSet::from_rows(rows).map_err(err)
}

fn rows(a: &Array2<f64>) -> Rows {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn divergence(name: &str) -> PyResult<Divergence> {
    name.parse().map_err(err)
}

fn sigma_policy(sigma: Option<f64>, policy: &str) -> PyResult<SigmaPolicy> {
    match sigma {
        Some(s) => Ok(SigmaPolicy::Fixed(s)),
        None => policy.parse().map_err(err),
    }
}

/// Local-linear estimate of the velocity field at `queries`. Without
/// `sigma` the pooled median bandwidth is used.
#[pyfunction]
#[pyo3(signature = (p, q, queries, div = "bkl", sigma = None, seed = 0))]
fn velocity_field(p: Rows, q: Rows, queries: Rows, div: &str, sigma: Option<f64>, seed: u64) -> PyResult<Rows> {
    let (dp, dq, x) = (set(&p)?, set(&q)?, set(&queries)?);
    let sigma = match sigma {
        Some(s) => s,
        None => pooled_median_bandwidth(&dp, &dq, MEDIAN_POINTS).map_err(err)?,
    };
    let opts = FitOptions {
        sigma,
        seed,
        ..FitOptions::default()
    };
    let v = wgflow::velocity_field(&x, &dp, &dq, divergence(div)?, &opts).map_err(err)?;
    Ok(rows(&v))
}

/// Nadaraya-Watson backward-KL field for an isotropic Gaussian target.
#[pyfunction]
#[pyo3(signature = (q, queries, mean, sd, sigma))]
fn nw_velocity(q: Rows, queries: Rows, mean: Vec<f64>, sd: f64, sigma: f64) -> PyResult<Rows> {
    let score = GaussianScore::new(mean, sd).map_err(err)?;
    let v = wgflow::nw_velocity(&set(&q)?, &score, &set(&queries)?, sigma).map_err(err)?;
    Ok(rows(&v))
}

/// Cross-validated bandwidth over the default grid; returns
/// `(chosen, candidates, criterion)`.
#[pyfunction]
#[pyo3(signature = (p, q, div = "bkl", folds = 5, seed = 0))]
fn select_bandwidth(p: Rows, q: Rows, div: &str, folds: usize, seed: u64) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let (dp, dq) = (set(&p)?, set(&q)?);
    let candidates = default_candidates(&dp, &dq).map_err(err)?;
    let r = select_rs(&dp, &dq, divergence(div)?, &candidates, folds, seed).map_err(err)?;
    Ok((r.chosen, r.candidates, r.criterion))
}

/// Particle flow from `q0` toward the sample `p`. `sigma` fixes the
/// bandwidth, otherwise `policy` ("median" or "cv") applies. Returns the
/// final particles and the `(iteration, monitor)` history.
#[pyfunction]
#[pyo3(signature = (p, q0, iters = 20, eta = 0.1, div = "bkl", sigma = None, policy = "cv", monitor = true, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn flow(
    p: Rows,
    q0: Rows,
    iters: usize,
    eta: f64,
    div: &str,
    sigma: Option<f64>,
    policy: &str,
    monitor: bool,
    seed: u64,
) -> PyResult<(Rows, Vec<(usize, f64)>)> {
    let cfg = FlowConfig {
        field: divergence(div)?,
        iters,
        eta,
        sigma: sigma_policy(sigma, policy)?,
        monitor,
        seed,
        ..FlowConfig::default()
    };
    let st = run_flow(&set(&p)?, &set(&q0)?, &cfg, FieldSource::LocalLinear).map_err(err)?;
    Ok((rows(&st.particles), st.history))
}

/// Fills NaN cells by the imputation flow; observed cells are returned
/// unchanged.
#[pyfunction]
#[pyo3(signature = (x, iters = 100, eta = 0.1, seed = 0))]
fn impute(x: Rows, iters: usize, eta: f64, seed: u64) -> PyResult<Rows> {
    let data = set(&x)?;
    let mask = data.data().mapv(|v| !v.is_nan());
    let cfg = ImputeConfig {
        iters,
        eta,
        seed,
        ..ImputeConfig::default()
    };
    let r = impute_rs(&data, &mask, &cfg).map_err(err)?;
    Ok(rows(&r.imputed.into_data()))
}

/// `n` draws from an isotropic Gaussian.
#[pyfunction]
#[pyo3(signature = (mean, sd, n, seed = 0))]
fn gaussian(mean: Vec<f64>, sd: f64, n: usize, seed: u64) -> PyResult<Rows> {
    Ok(rows(&gen_gaussian(&mean, sd, n, seed).map_err(err)?.into_data()))
}

/// `n` noisy draws from the two-dimensional S shape.
#[pyfunction]
#[pyo3(signature = (n, noise = 0.1, seed = 0))]
fn s_shape(n: usize, noise: f64, seed: u64) -> PyResult<Rows> {
    Ok(rows(&gen_s_shape(n, noise, seed).map_err(err)?.into_data()))
}

#[pymodule]
fn wgflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(velocity_field, m)?)?;
    m.add_function(wrap_pyfunction!(nw_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(select_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(impute, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(s_shape, m)?)?;
    Ok(())
}
