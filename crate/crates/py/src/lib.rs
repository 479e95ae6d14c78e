//! Python bindings for the `fql_ems` crate.

use std::path::PathBuf;

use fql_ems::config::RunConfig;
use fql_ems::cycle::{load_cycle, DriveCycle, SpeedUnit};
use fql_ems::fis::RuleGrid;
use fql_ems::fql::Agent;
use fql_ems::powertrain::PowertrainModel;
use fql_ems::trainer;
use fql_ems::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_)
        | Error::Param(_)
        | Error::Parse { .. }
        | Error::NonUniformSampling { .. }
        | Error::NegativeVelocity { .. }
        | Error::ShapeMismatch { .. }
        | Error::Json(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn run_config(config: Option<PathBuf>) -> PyResult<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p).map_err(to_py)?,
        None => RunConfig::default(),
    };
    cfg.apply_seed_fallback().map_err(to_py)?;
    Ok(cfg)
}

/// Vehicle, fuel-cell and battery model.
#[pyclass(name = "PowertrainModel", module = "fql_ems_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: PowertrainModel,
}

#[pymethods]
impl PyModel {
    /// Default parameters with the stack calibrated to the reference anchors.
    #[staticmethod]
    fn calibrated_default() -> PyResult<Self> {
        Ok(Self {
            inner: PowertrainModel::calibrated_default().map_err(to_py)?,
        })
    }

    /// Model described by a `key = value` config file.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = run_config(Some(path))?.model().map_err(to_py)?;
        Ok(Self { inner })
    }

    /// (current A, power W) at the stack's maximum power point.
    fn max_power_point(&self) -> (f64, f64) {
        let fc = &self.inner.fuel_cell;
        let (i, p) = fc.max_power_point();
        (i * fc.area_cm2, p)
    }

    /// HHV efficiency at a stack current in A.
    fn efficiency(&self, current: f64) -> PyResult<f64> {
        let fc = &self.inner.fuel_cell;
        fc.hhv_efficiency(current / fc.area_cm2).map_err(to_py)
    }

    #[getter]
    fn p_fc_max(&self) -> f64 {
        self.inner.fuel_cell.p_fc_max
    }
}

/// Drive cycle with its derived power demand.
#[pyclass(name = "DriveCycle", module = "fql_ems_py", skip_from_py_object)]
#[derive(Clone)]
struct PyCycle {
    inner: DriveCycle,
}

#[pymethods]
impl PyCycle {
    /// Bundled cycle: "udds" or "nedc".
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        let cfg = RunConfig::default();
        Ok(Self {
            inner: cfg.load_cycle(name).map_err(to_py)?,
        })
    }

    /// CSV cycle with a `time,velocity` header; `units` is "mps" or "kmh".
    #[staticmethod]
    #[pyo3(signature = (path, units = "mps"))]
    fn load(path: PathBuf, units: &str) -> PyResult<Self> {
        let unit: SpeedUnit = units.parse().map_err(to_py)?;
        let mut inner = load_cycle(path, unit).map_err(to_py)?;
        let cfg = RunConfig::default();
        inner.derive_power(&cfg.vehicle, cfg.power_limit);
        Ok(Self { inner })
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.summary())
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn velocity(&self) -> Vec<f64> {
        self.inner.velocity.clone()
    }

    #[getter]
    fn power(&self) -> Vec<f64> {
        self.inner.power.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Fuzzy Q-learning agent.
#[pyclass(name = "Agent", module = "fql_ems_py", skip_from_py_object)]
#[derive(Clone)]
struct PyAgent {
    inner: Agent,
}

#[pymethods]
impl PyAgent {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Agent::load(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Agent::from_json(text).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Greedy fuel-cell power command in W.
    fn act(&self, p_veh: f64, soc: f64) -> PyResult<f64> {
        Ok(self.inner.act_greedy(p_veh, soc).map_err(to_py)?.power)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.q.shape()
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        self.inner.q.rows()
    }
}

/// Rule firing strengths for a state (vehicle power in W, SOC as a fraction).
#[pyfunction]
fn fuzzify(p_veh: f64, soc: f64) -> Vec<f64> {
    RuleGrid::default().fuzzify(p_veh, soc)
}

/// Fits the polarization curve; returns the calibration report as a dict.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn calibrate(py: Python<'_>, config: Option<PathBuf>) -> PyResult<Bound<'_, PyAny>> {
    let cfg = RunConfig {
        calibrate: true,
        ..run_config(config)?
    };
    cfg.validate().map_err(to_py)?;
    let (_, report) = cfg.fuel_cell_resolved().map_err(to_py)?;
    json_to_py(py, &report)
}

/// Trains an agent; returns `(agent, per-episode metrics)`.
#[pyfunction]
#[pyo3(signature = (cycle = None, episodes = None, seed = None, start_penalty = None, config = None))]
fn train<'py>(
    py: Python<'py>,
    cycle: Option<String>,
    episodes: Option<usize>,
    seed: Option<u64>,
    start_penalty: Option<f64>,
    config: Option<PathBuf>,
) -> PyResult<(PyAgent, Bound<'py, PyAny>)> {
    let mut cfg = run_config(config)?;
    if let Some(c) = cycle {
        cfg.cycle = c;
    }
    if let Some(n) = episodes {
        cfg.train.episodes = n;
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(k) = start_penalty {
        cfg.train.env.start_penalty = k;
    }
    let outcome = py
        .detach(|| {
            let run = cfg.resolve()?;
            trainer::train(&run.cycle, &run.model, &cfg.train, |_| {})
        })
        .map_err(to_py)?;
    let metrics = json_to_py(py, &outcome.episodes)?;
    Ok((PyAgent { inner: outcome.agent }, metrics))
}

/// Greedy evaluation over `repeat` consecutive passes; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (agent, cycle = None, soc0 = 0.5, repeat = 1, config = None))]
fn evaluate<'py>(
    py: Python<'py>,
    agent: &PyAgent,
    cycle: Option<String>,
    soc0: f64,
    repeat: usize,
    config: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let from_file = config.is_some();
    let mut cfg = run_config(config)?;
    if let Some(c) = cycle {
        cfg.cycle = c;
    }
    if !from_file {
        if let Some(k) = agent.inner.metadata.get("start_penalty").and_then(|v| v.as_f64()) {
            cfg.train.env.start_penalty = k;
        }
    }
    let report = py
        .detach(|| {
            let run = cfg.resolve()?;
            trainer::evaluate(&agent.inner, &run.cycle, &run.model, &cfg.train.env, soc0, repeat)
        })
        .map_err(to_py)?;
    json_to_py(py, &report)
}

#[pymodule]
fn fql_ems_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyCycle>()?;
    m.add_class::<PyAgent>()?;
    m.add_function(wrap_pyfunction!(fuzzify, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
