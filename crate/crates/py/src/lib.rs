//! Python bindings. Initial laws and policies are passed as plain dicts in
//! the same shape as the TOML configs, e.g. `{"kind": "gaussian", "mean": [0.5], "std": 0.5}`.

#![allow(clippy::too_many_arguments)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use pathmfc_cli::config::{build_model, ExperimentConfig, ModelConfig};
use pathmfc_cli::{CliError, Command};
use pathmfc_core::calculus::{
    ito_verify_many, measure_derivative_field, measure_derivative_field_richardson, zoo,
    zoo_by_tag, CylindricalFunctional,
};
use pathmfc_core::control::{dpp_check, estimate_value, ActionSet, ControlPolicy};
use pathmfc_core::hilbert::SpectralOperator;
use pathmfc_core::hjb::investment_hamiltonian_closed_form;
use pathmfc_core::measure::{mean_at, stopped_measure, wasserstein2, EmpiricalPathMeasure, W2Mode};
use pathmfc_core::pathspace::{PathGrid, TimeGrid};
use pathmfc_core::sde::{
    derive_seed, integrate_with, integrate_yosida, s2_distance, Init, IntegrateOptions, ModelSpec,
    ParticleEnsemble,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(pathmfc, PathmfcError, PyException);

fn err(e: pathmfc_core::Error) -> PyErr {
    PathmfcError::new_err(e.to_string())
}

fn cli_err(e: CliError) -> PyErr {
    PathmfcError::new_err(e.to_string())
}

/// Python object -> serde value, through the `json` module.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn family(policies: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<ControlPolicy>> {
    match policies {
        Some(p) => from_py(p),
        None => Ok(vec![ControlPolicy::none()]),
    }
}

/// A built-in model, by tag and parameters.
#[pyclass(name = "Model", frozen)]
pub struct PyModel {
    inner: ModelSpec,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (tag, steps = 100, horizon = 1.0, params = None))]
    fn new(
        tag: &str,
        steps: usize,
        horizon: f64,
        params: Option<BTreeMap<String, f64>>,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            tag: Some(tag.into()),
            horizon,
            steps,
            params: params.unwrap_or_default(),
            inline: None,
        };
        Ok(PyModel {
            inner: build_model(&cfg).map_err(cli_err)?,
        })
    }

    #[getter]
    fn tag(&self) -> &str {
        &self.inner.tag
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.grid.steps
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.grid.horizon
    }

    fn times(&self) -> Vec<f64> {
        (0..self.inner.grid.nodes())
            .map(|j| self.inner.grid.time(j))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({:?}, d={}, steps={})",
            self.inner.tag,
            self.inner.d(),
            self.inner.grid.steps
        )
    }
}

/// Particles of one integration run.
#[pyclass(name = "Ensemble", frozen)]
pub struct PyEnsemble {
    inner: ParticleEnsemble,
}

#[pymethods]
impl PyEnsemble {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn start(&self) -> usize {
        self.inner.start
    }

    #[getter]
    fn end(&self) -> usize {
        self.inner.end
    }

    fn times(&self) -> Vec<f64> {
        let g = self.inner.grid();
        (0..g.nodes()).map(|j| g.time(j)).collect()
    }

    /// Particle mean at every node from `start` to `end`.
    fn mean_path(&self) -> Vec<Vec<f64>> {
        (self.inner.start..=self.inner.end)
            .map(|j| self.inner.law(j).mean_now().to_vec())
            .collect()
    }

    /// Coordinate `k` of every particle at node `j`.
    #[pyo3(signature = (j, k = 0))]
    fn marginal(&self, j: usize, k: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.grid().nodes() || k >= self.inner.dim() {
            return Err(PyValueError::new_err("node or coordinate out of range"));
        }
        Ok(self.inner.marginal(j, k))
    }

    /// Paths as `[particle][node][coordinate]`.
    fn paths(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner
            .particles
            .iter()
            .map(|p| (0..p.grid().nodes()).map(|j| p.at(j).to_vec()).collect())
            .collect()
    }

    fn measure(&self) -> PyPathMeasure {
        PyPathMeasure {
            inner: self.inner.to_measure(),
        }
    }

    fn s2_distance(&self, other: &PyEnsemble) -> PyResult<f64> {
        s2_distance(&self.inner, &other.inner).map_err(err)
    }

    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.diagnostics)
    }
}

/// A weighted empirical law on paths over a uniform grid on `[0, horizon]`.
#[pyclass(name = "PathMeasure", frozen)]
pub struct PyPathMeasure {
    inner: EmpiricalPathMeasure,
}

#[pymethods]
impl PyPathMeasure {
    /// `paths[i][j][k]` is coordinate `k` of atom `i` at node `j`.
    #[new]
    #[pyo3(signature = (paths, horizon = 1.0, weights = None))]
    fn new(paths: Vec<Vec<Vec<f64>>>, horizon: f64, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let nodes = paths.first().map_or(0, |p| p.len());
        if nodes < 2 {
            return Err(PyValueError::new_err("paths need at least two nodes"));
        }
        let grid = TimeGrid::new(horizon, nodes - 1).map_err(err)?;
        let atoms = paths
            .iter()
            .map(|p| {
                if p.len() != nodes {
                    return Err(PyValueError::new_err(
                        "all paths need the same number of nodes",
                    ));
                }
                let d = p[0].len();
                let mut x = PathGrid::zeros(grid, d);
                for (j, v) in p.iter().enumerate() {
                    if v.len() != d {
                        return Err(PyValueError::new_err("ragged path coordinates"));
                    }
                    x.at_mut(j).copy_from_slice(v);
                }
                Ok(x)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = match weights {
            Some(w) => EmpiricalPathMeasure::new(atoms, w),
            None => EmpiricalPathMeasure::uniform(atoms),
        }
        .map_err(err)?;
        Ok(PyPathMeasure { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn stopped(&self, t: f64) -> PyResult<PyPathMeasure> {
        Ok(PyPathMeasure {
            inner: stopped_measure(&self.inner, t).map_err(err)?,
        })
    }

    fn mean_at(&self, t: f64) -> PyResult<Vec<f64>> {
        Ok(mean_at(&self.inner, t).map_err(err)?.0)
    }

    /// `mode` is "exact" or "sliced".
    #[pyo3(signature = (other, mode = "exact", projections = 256, seed = 0))]
    fn wasserstein2(
        &self,
        other: &PyPathMeasure,
        mode: &str,
        projections: usize,
        seed: u64,
    ) -> PyResult<f64> {
        let mode = match mode {
            "exact" => W2Mode::Exact,
            "sliced" => W2Mode::Sliced { projections, seed },
            m => return Err(PyValueError::new_err(format!("unknown mode {m:?}"))),
        };
        Ok(wasserstein2(&self.inner, &other.inner, mode)
            .map_err(err)?
            .distance)
    }
}

/// Integrates the particle system from `t0`.
#[pyfunction]
#[pyo3(signature = (model, init, particles, seed, t0 = 0.0, policy = None, substeps = 1))]
fn simulate(
    model: &PyModel,
    init: &Bound<'_, PyAny>,
    particles: usize,
    seed: u64,
    t0: f64,
    policy: Option<&Bound<'_, PyAny>>,
    substeps: usize,
) -> PyResult<PyEnsemble> {
    let init: Init = from_py(init)?;
    let policy = match policy {
        Some(p) => from_py(p)?,
        None => ControlPolicy::none(),
    };
    let opts = IntegrateOptions::new(t0, particles, seed).substeps(substeps);
    let inner = integrate_with(&model.inner, &init, &policy, &opts).map_err(err)?;
    Ok(PyEnsemble { inner })
}

/// Same as `simulate` with the generator replaced by its Yosida approximation `A_n`.
#[pyfunction]
#[pyo3(signature = (model, n, init, particles, seed, t0 = 0.0))]
fn simulate_yosida(
    model: &PyModel,
    n: f64,
    init: &Bound<'_, PyAny>,
    particles: usize,
    seed: u64,
    t0: f64,
) -> PyResult<PyEnsemble> {
    let init: Init = from_py(init)?;
    let opts = IntegrateOptions::new(t0, particles, seed);
    let inner =
        integrate_yosida(&model.inner, n, &init, &ControlPolicy::none(), &opts).map_err(err)?;
    Ok(PyEnsemble { inner })
}

#[pyfunction(name = "derive_seed")]
fn py_derive_seed(seed: u64, purpose: u64) -> u64 {
    derive_seed(seed, purpose)
}

/// Tags of the built-in cylindrical functionals.
#[pyfunction]
#[pyo3(signature = (dim = 1))]
fn functionals(dim: usize) -> Vec<String> {
    zoo(dim).iter().map(|p| p.tag().to_string()).collect()
}

/// Finite-difference measure derivative of a built-in functional at every atom.
#[pyfunction]
#[pyo3(signature = (functional, t, measure, eps = None, richardson = false))]
fn measure_derivative(
    functional: &str,
    t: f64,
    measure: &PyPathMeasure,
    eps: Option<f64>,
    richardson: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let phi = zoo_by_tag(functional, measure.inner.dim()).map_err(err)?;
    let field = if richardson {
        measure_derivative_field_richardson(phi.as_ref(), t, &measure.inner, eps)
    } else {
        measure_derivative_field(phi.as_ref(), t, &measure.inner, eps)
    }
    .map_err(err)?;
    Ok(field.into_iter().map(|v| v.0).collect())
}

/// Functional Itô check of built-in functionals along the uncontrolled system.
#[pyfunction]
#[pyo3(signature = (functionals, model, init, particles, seed, t = 0.0, s = 1.0))]
fn ito_check<'py>(
    py: Python<'py>,
    functionals: Vec<String>,
    model: &PyModel,
    init: &Bound<'py, PyAny>,
    particles: usize,
    seed: u64,
    t: f64,
    s: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let init: Init = from_py(init)?;
    let phis = functionals
        .iter()
        .map(|tag| zoo_by_tag(tag, model.inner.d()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let refs: Vec<&dyn CylindricalFunctional> = phis.iter().map(|p| p.as_ref()).collect();
    let reports =
        ito_verify_many(&refs, &model.inner, &init, t, s, particles, seed).map_err(err)?;
    to_py(py, &reports)
}

/// Best value over a policy family (a list of policy dicts; uncontrolled when omitted).
#[pyfunction]
#[pyo3(signature = (model, init, particles, seed, policies = None, t0 = 0.0))]
fn value<'py>(
    py: Python<'py>,
    model: &PyModel,
    init: &Bound<'py, PyAny>,
    particles: usize,
    seed: u64,
    policies: Option<&Bound<'py, PyAny>>,
    t0: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let init: Init = from_py(init)?;
    let est = estimate_value(&model.inner, &init, &family(policies)?, t0, particles, seed)
        .map_err(err)?;
    to_py(py, &est)
}

/// Dynamic programming check between `t0` and the split time `s`.
#[pyfunction]
#[pyo3(signature = (model, init, s, particles, seed, policies = None, t0 = 0.0, branching = 4))]
fn dpp<'py>(
    py: Python<'py>,
    model: &PyModel,
    init: &Bound<'py, PyAny>,
    s: f64,
    particles: usize,
    seed: u64,
    policies: Option<&Bound<'py, PyAny>>,
    t0: f64,
    branching: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let init: Init = from_py(init)?;
    let r = dpp_check(
        &model.inner,
        &init,
        &family(policies)?,
        t0,
        s,
        particles,
        seed,
        branching,
    )
    .map_err(err)?;
    to_py(py, &r)
}

/// Closed-form maximizer of the investment Hamiltonian over the box `[lo, hi]`.
#[pyfunction]
fn investment_hamiltonian<'py>(
    py: Python<'py>,
    p: Vec<f64>,
    t: f64,
    r: f64,
    a2: Vec<f64>,
    c: Vec<f64>,
    m: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let set = ActionSet::boxed(lo, hi).map_err(err)?;
    let sol = investment_hamiltonian_closed_form(
        &p,
        t,
        r,
        &a2,
        &SpectralOperator::bounded(c),
        &SpectralOperator::bounded(m),
        &set,
    )
    .map_err(err)?;
    to_py(py, &sol)
}

/// Runs a CLI subcommand (e.g. "dpp-check", "suite") and returns its report.
#[pyfunction]
#[pyo3(signature = (command, out, config = None, seed = None))]
fn run<'py>(
    py: Python<'py>,
    command: &str,
    out: PathBuf,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cmd = Command::from_name(command)
        .ok_or_else(|| PyValueError::new_err(format!("unknown command {command:?}")))?;
    let mut cfg = match config {
        Some(text) => ExperimentConfig::from_toml(text),
        None => ExperimentConfig::load(None),
    }
    .map_err(cli_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = pathmfc_cli::run(cmd, &cfg, &out).map_err(cli_err)?;
    to_py(py, &report)
}

#[pymodule]
fn pathmfc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("PathmfcError", m.py().get_type::<PathmfcError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyPathMeasure>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_yosida, m)?)?;
    m.add_function(wrap_pyfunction!(py_derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(functionals, m)?)?;
    m.add_function(wrap_pyfunction!(measure_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(ito_check, m)?)?;
    m.add_function(wrap_pyfunction!(value, m)?)?;
    m.add_function(wrap_pyfunction!(dpp, m)?)?;
    m.add_function(wrap_pyfunction!(investment_hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
