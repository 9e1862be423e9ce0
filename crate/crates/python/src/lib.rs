use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dispatch::calibration::calibrate;
use dispatch::cli::load_profiles;
use dispatch::design::DesignConfig;
use dispatch::dynamics::{BatterySpec, CalibratedModel, JacobiParams, WindModel};
use dispatch::error::Error;
use dispatch::evaluate::{metrics, rollout, ControlPolicy, ZeroPolicy};
use dispatch::lq_baseline::{LqParams, LqPolicy};
use dispatch::objectives::{self, Objective, ObjectiveKind};
use dispatch::solver::{self, SolverConfig};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Accepts a bare kind name ("quadratic", "l1") or a JSON object such as
/// `{"kind": "degradation", "lambda_bl": 0.1}`.
fn parse_kind(spec: &str) -> PyResult<ObjectiveKind> {
    let text = spec.trim();
    if text.starts_with('{') {
        serde_json::from_str(text).map_err(json_err)
    } else {
        serde_json::from_value(serde_json::json!({ "kind": text })).map_err(json_err)
    }
}

#[pyclass(name = "Battery", module = "hybrid_dispatch", from_py_object)]
#[derive(Clone)]
pub struct PyBattery {
    inner: BatterySpec,
}

#[pymethods]
impl PyBattery {
    #[new]
    #[pyo3(signature = (i_min, i_max, b_min, b_max, eta, i_target, terminal_penalty))]
    fn new(i_min: f64, i_max: f64, b_min: f64, b_max: f64, eta: f64, i_target: f64, terminal_penalty: f64) -> PyResult<Self> {
        let inner = BatterySpec::new(i_min, i_max, b_min, b_max, eta, i_target, terminal_penalty).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Admissible rate interval at SoC `i` over a step of length `dt`.
    fn admissible_range(&self, i: f64, dt: f64) -> (f64, f64) {
        self.inner.admissible_range(i, dt)
    }

    fn soc_step(&self, i: f64, b: f64, dt: f64) -> PyResult<f64> {
        self.inner.soc_step(i, b, dt).map_err(py_err)
    }

    #[getter]
    fn i_max(&self) -> f64 {
        self.inner.i_max
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Problem", module = "hybrid_dispatch")]
pub struct PyProblem {
    inner: solver::Problem,
}

#[pymethods]
impl PyProblem {
    /// Problem driven by a Jacobi diffusion with constant parameters.
    #[staticmethod]
    #[pyo3(signature = (alpha, m, sigma, x_max, dt, n_steps, battery, objective, target, x0, i0))]
    #[allow(clippy::too_many_arguments)]
    fn jacobi(
        alpha: f64,
        m: f64,
        sigma: f64,
        x_max: f64,
        dt: f64,
        n_steps: usize,
        battery: PyBattery,
        objective: &str,
        target: f64,
        x0: f64,
        i0: f64,
    ) -> PyResult<Self> {
        let params = JacobiParams::stationary(alpha, m, sigma, x_max, dt, n_steps).map_err(py_err)?;
        let objective = Objective::constant(parse_kind(objective)?, target, n_steps).map_err(py_err)?;
        Self::build(WindModel::Jacobi(params), battery.inner, objective, x0, i0)
    }

    /// Problem driven by a calibrated hourly model; the forecast is also the firming target.
    #[staticmethod]
    #[pyo3(signature = (model_json, forecast, battery, objective, i0))]
    fn calibrated(model_json: &str, forecast: Vec<f64>, battery: PyBattery, objective: &str, i0: f64) -> PyResult<Self> {
        let model: CalibratedModel = serde_json::from_str(model_json).map_err(json_err)?;
        let x0 = *forecast.first().ok_or_else(|| PyValueError::new_err("empty forecast"))?;
        let objective = Objective::new(parse_kind(objective)?, forecast.clone()).map_err(py_err)?;
        Self::build(WindModel::Calibrated { model, forecast }, battery.inner, objective, x0, i0)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: solver::Problem = serde_json::from_str(text).map_err(json_err)?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }
}

impl PyProblem {
    fn build(model: WindModel, battery: BatterySpec, objective: Objective, x0: f64, i0: f64) -> PyResult<Self> {
        let inner = solver::Problem { model, battery, objective, x0, i0 };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }
}

#[pyclass(name = "Policy", module = "hybrid_dispatch")]
pub struct PyPolicy {
    inner: solver::Policy,
}

#[pymethods]
impl PyPolicy {
    /// Projected control at step `k`.
    fn control(&self, k: usize, x: f64, i: f64) -> f64 {
        self.inner.control(k, x, i)
    }

    fn raw_control(&self, k: usize, x: f64, i: f64) -> f64 {
        self.inner.raw_control(k, x, i)
    }

    fn value(&self, k: usize, x: f64, i: f64) -> f64 {
        self.inner.value(k, x, i)
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: solver::Policy::from_json(text).map_err(py_err)? })
    }
}

#[pyclass(name = "LqPolicy", module = "hybrid_dispatch")]
pub struct PyLqPolicy {
    inner: LqPolicy,
}

#[pymethods]
impl PyLqPolicy {
    /// Riccati feedback for a Jacobi problem with tracking weights `c1`, `c2`.
    #[new]
    #[pyo3(signature = (problem, c1, c2, substeps = 64))]
    fn new(problem: &PyProblem, c1: f64, c2: f64, substeps: usize) -> PyResult<Self> {
        let p = &problem.inner;
        let WindModel::Jacobi(wind) = &p.model else {
            return Err(PyValueError::new_err("LQ baseline needs a Jacobi problem"));
        };
        let params = LqParams::new(wind, &p.battery, &p.objective.target, c1, c2).map_err(py_err)?;
        Ok(Self { inner: LqPolicy::new(&params, &p.battery, substeps).map_err(py_err)? })
    }

    fn control(&self, k: usize, x: f64, i: f64) -> f64 {
        self.inner.control(k, x, i)
    }
}

#[derive(FromPyObject)]
enum AnyPolicy<'py> {
    Gp(PyRef<'py, PyPolicy>),
    Lq(PyRef<'py, PyLqPolicy>),
}

/// Backward induction with GP emulators.
#[pyfunction]
#[pyo3(signature = (problem, n_loc = 200, n_rep = 20, seed = 0))]
fn solve(py: Python<'_>, problem: &PyProblem, n_loc: usize, n_rep: usize, seed: u64) -> PyResult<PyPolicy> {
    let cfg = SolverConfig {
        design: DesignConfig { n_loc, n_rep, ..DesignConfig::default() },
        ..SolverConfig::default()
    };
    let p = problem.inner.clone();
    let inner = py.detach(move || solver::backward_solve(&p, &cfg, seed)).map_err(py_err)?;
    Ok(PyPolicy { inner })
}

/// Monte Carlo metrics of a policy; `None` evaluates the idle battery.
#[pyfunction]
#[pyo3(signature = (problem, policy = None, n_paths = 10_000, seed = 0))]
fn evaluate<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    policy: Option<AnyPolicy<'py>>,
    n_paths: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = &problem.inner;
    let control: &dyn ControlPolicy = match &policy {
        Some(AnyPolicy::Gp(g)) => &g.inner,
        Some(AnyPolicy::Lq(l)) => &l.inner,
        None => &ZeroPolicy,
    };
    let trajectories =
        rollout(control, &p.model, &p.battery, &p.objective, p.x0, p.i0, n_paths, seed).map_err(py_err)?;
    let thresholds: Vec<f64> = (0..p.objective.n_steps()).map(|k| p.objective.threshold_at(k)).collect();
    let report = metrics(&trajectories, &p.objective.target, &p.battery, Some(&thresholds)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("n_paths", report.n_paths)?;
    out.set_item("value", (report.value.mean, report.value.se))?;
    out.set_item("edr", (report.edr.mean, report.edr.se))?;
    out.set_item("pooled_dr", report.pooled_dr)?;
    out.set_item("ebl_years", (report.ebl_years.mean, report.ebl_years.se))?;
    if let Some(e) = report.ecv {
        out.set_item("ecv", (e.mean, e.se))?;
    }
    let bands: Vec<(f64, f64, f64, f64)> =
        report.bands.iter().map(|b| (b.raw_lo, b.raw_hi, b.firmed_lo, b.firmed_hi)).collect();
    out.set_item("bands", bands)?;
    Ok(out)
}

/// Fits the binned model to a profiles CSV and returns it as JSON.
#[pyfunction]
#[pyo3(signature = (path, n_bins = 10))]
fn calibrate_csv(path: &str, n_bins: usize) -> PyResult<String> {
    let series = load_profiles(std::path::Path::new(path)).map_err(py_err)?;
    let fitted = calibrate(&series, n_bins).map_err(py_err)?;
    serde_json::to_string(&fitted.model).map_err(json_err)
}

/// Stress of one half cycle at depth `dod`.
#[pyfunction]
fn theta(dod: f64) -> f64 {
    objectives::theta(dod)
}

/// Rainflow degradation of a SoC path on a battery of capacity `i_cap`.
#[pyfunction]
fn degradation(soc: Vec<f64>, i_cap: f64) -> f64 {
    objectives::degradation(&objectives::rainflow(&soc, i_cap))
}

#[pymodule]
fn hybrid_dispatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBattery>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyLqPolicy>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_csv, m)?)?;
    m.add_function(wrap_pyfunction!(theta, m)?)?;
    m.add_function(wrap_pyfunction!(degradation, m)?)?;
    Ok(())
}
