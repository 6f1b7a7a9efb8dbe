//! Python bindings for `flocklab`.
//!
//! Structured results (certificates, audit reports, scenario documents)
//! cross the boundary as JSON and are decoded with the standard `json`
//! module, so they arrive as plain dicts.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use flocklab::certify::contraction_coefficient;
use flocklab::cli::{cmd_audit, simulate_to_dir};
use flocklab::integrate::{run_model, Trajectory as CoreTrajectory};
use flocklab::scenario::{self, materialize, parse_scenario, with_overrides, Scenario as CoreScenario};
use flocklab::state::{matrix_from_rows, matrix_to_rows, spread_value};
use flocklab::FlockError;

fn to_py_err(e: FlockError) -> PyErr {
    match e {
        FlockError::Io(_) | FlockError::Artifact(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn py_to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    matrix_from_rows(&rows).map_err(to_py_err)
}

/// A materialized scenario: model, initial state and certificate inputs.
#[pyclass(name = "Scenario", module = "flocklab_py")]
pub struct PyScenario {
    inner: CoreScenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file = parse_scenario(text).map_err(to_py_err)?;
        Ok(Self { inner: materialize(&file).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        Ok(Self { inner: scenario::load_bundled(name).map_err(to_py_err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.spec.n
    }

    #[getter]
    fn r(&self) -> usize {
        self.inner.spec.r
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.file.seed
    }

    #[getter]
    fn x0(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.state0.x.view())
    }

    #[getter]
    fn v0(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.state0.v.view())
    }

    /// Copy with a different seed; random draws are redone.
    fn with_seed(&self, seed: u64) -> PyResult<Self> {
        let file = self.inner.file.clone().with_seed(seed);
        Ok(Self { inner: materialize(&file).map_err(to_py_err)? })
    }

    /// Copy with dotted-path overrides, e.g. `{"coupling.modulated.delta": 0.5}`.
    fn with_overrides(&self, py: Python<'_>, overrides: &Bound<'_, pyo3::types::PyDict>) -> PyResult<Self> {
        let mut pairs = vec![];
        for (k, v) in overrides.iter() {
            pairs.push((k.extract::<String>()?, py_to_json(py, &v)?));
        }
        let file = with_overrides(&self.inner.file, &pairs).map_err(to_py_err)?;
        Ok(Self { inner: materialize(&file).map_err(to_py_err)? })
    }

    fn to_json(&self) -> String {
        self.inner.file.to_json_pretty()
    }

    /// The certificate for the model variant, as a dict with a `kind` key.
    fn certify<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let cert = self.inner.certify().map_err(to_py_err)?;
        json_to_py(py, &cert)
    }

    fn certificate_report(&self) -> PyResult<String> {
        Ok(self.inner.certify().map_err(to_py_err)?.to_report())
    }

    fn simulate(&self, py: Python<'_>) -> PyResult<PyTrajectory> {
        let sc = &self.inner;
        let traj = py.detach(|| run_model(&sc.spec, &sc.state0, sc.integrator())).map_err(to_py_err)?;
        Ok(PyTrajectory { inner: traj })
    }

    /// Simulates and writes CSV, SVG, certificate and manifest into `out`.
    #[pyo3(signature = (out, full = false))]
    fn write_run(&self, py: Python<'_>, out: PathBuf, full: bool) -> PyResult<PyTrajectory> {
        let sc = &self.inner;
        let art = py.detach(|| simulate_to_dir(sc, &out, full)).map_err(to_py_err)?;
        Ok(PyTrajectory { inner: art.trajectory })
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, n={}, r={}, seed={})", self.inner.name(), self.inner.spec.n, self.inner.spec.r, self.inner.file.seed)
    }
}

/// Sampled trajectory.
#[pyclass(name = "Trajectory", module = "flocklab_py")]
pub struct PyTrajectory {
    inner: CoreTrajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    #[getter]
    fn accepted(&self) -> usize {
        self.inner.accepted
    }

    #[getter]
    fn rejected(&self) -> usize {
        self.inner.rejected
    }

    #[getter]
    fn termination<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.termination)
    }

    #[getter]
    fn completed(&self) -> bool {
        self.inner.termination.is_completed()
    }

    fn spread_v(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| spread_value(s.v.view())).collect()
    }

    fn spread_x(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| spread_value(s.x.view())).collect()
    }

    /// Positions at sample `k` as `n` rows of length `r`.
    fn x(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = self.inner.samples.get(k).ok_or_else(|| PyValueError::new_err(format!("sample {k} out of range")))?;
        Ok(matrix_to_rows(s.x.view()))
    }

    fn v(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = self.inner.samples.get(k).ok_or_else(|| PyValueError::new_err(format!("sample {k} out of range")))?;
        Ok(matrix_to_rows(s.v.view()))
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }
}

/// Spread `S(y)` of an `n × r` array given as rows.
#[pyfunction]
fn spread(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(spread_value(matrix(rows)?.view()))
}

/// `(row_sum, tau)` for a nonnegative constant-row-sum matrix.
#[pyfunction]
#[pyo3(signature = (rows, row_sum_tol = 1e-9))]
fn contraction(rows: Vec<Vec<f64>>, row_sum_tol: f64) -> PyResult<(f64, f64)> {
    let res = contraction_coefficient(matrix(rows)?.view(), row_sum_tol).map_err(to_py_err)?;
    Ok((res.row_sum, res.tau))
}

/// Re-checks a run directory; returns the violation report as a dict.
#[pyfunction]
fn audit<'py>(py: Python<'py>, run: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let out = py.detach(|| cmd_audit(&run)).map_err(to_py_err)?;
    let dict = json_to_py(py, &out.report)?;
    dict.set_item("lemma", out.lemma)?;
    dict.set_item("k_used", out.k_used)?;
    Ok(dict)
}

#[pyfunction]
fn bundled_names() -> Vec<&'static str> {
    scenario::BUNDLED.to_vec()
}

#[pymodule]
fn flocklab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(spread, m)?)?;
    m.add_function(wrap_pyfunction!(contraction, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_names, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
