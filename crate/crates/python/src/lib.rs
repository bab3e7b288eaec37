//! Python bindings: epochs, the trained estimator, the solver and regulator
//! operations, and the evaluation pipeline.

use std::path::PathBuf;
use std::str::FromStr;

use gnss_regulator::estimator::{
    elevation_samples, fit_elevation_model, initial_state, train, Provenance, TrainConfig,
    TrainedModel,
};
use gnss_regulator::eval::{self, Estimators, ErrorSource, PipelineSpec};
use gnss_regulator::selector::SelectorConfig;
use gnss_regulator::simulator::{self, DatasetSpec};
use gnss_regulator::solver::{self, WlsConfig};
use gnss_regulator::{regulator, Epoch, Error, Method};
use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(gnss_regulator, ConfigError, PyValueError);
create_exception!(gnss_regulator, DataError, PyValueError);
create_exception!(gnss_regulator, NumericalError, PyArithmeticError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match (&e, e.exit_code()) {
        (Error::Io { .. }, _) => PyIOError::new_err(msg),
        (_, 2) => ConfigError::new_err(msg),
        (_, 3) => DataError::new_err(msg),
        _ => NumericalError::new_err(msg),
    }
}

fn method(name: &str) -> PyResult<Method> {
    Method::from_str(name).map_err(to_py)
}

/// One set of simultaneous pseudo-range measurements.
#[pyclass(name = "Epoch", frozen, skip_from_py_object, module = "gnss_regulator")]
#[derive(Clone)]
struct PyEpoch {
    inner: Epoch,
}

#[pymethods]
impl PyEpoch {
    /// Parses one JSONL record.
    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        Ok(Self {
            inner: simulator::parse_epoch_line(line).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (include_truth = true))]
    fn to_json(&self, include_truth: bool) -> PyResult<String> {
        simulator::epoch_to_json_line(&self.inner, include_truth).map_err(to_py)
    }

    #[getter]
    fn epoch_id(&self) -> u64 {
        self.inner.epoch_id
    }

    #[getter]
    fn region(&self) -> String {
        self.inner.region_id.clone()
    }

    #[getter]
    fn pseudoranges(&self) -> Vec<f64> {
        self.inner.observations.iter().map(|o| o.pseudorange).collect()
    }

    #[getter]
    fn cn0(&self) -> Vec<f64> {
        self.inner.observations.iter().map(|o| o.cn0).collect()
    }

    #[getter]
    fn satellite_positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .observations
            .iter()
            .map(|o| (o.sat.pos.x, o.sat.pos.y, o.sat.pos.z))
            .collect()
    }

    #[getter]
    fn initial_guess(&self) -> (f64, f64, f64) {
        let g = self.inner.initial_guess;
        (g.x, g.y, g.z)
    }

    /// `(x, y, z, clock_bias)` when the truth is known.
    #[getter]
    fn truth(&self) -> Option<(f64, f64, f64, f64)> {
        self.inner
            .truth
            .map(|t| (t.pos.x, t.pos.y, t.pos.z, t.clock_bias))
    }

    #[getter]
    fn truth_errors(&self) -> Option<Vec<f64>> {
        self.inner.truth_errors()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Epoch(id={}, region={:?}, measurements={})",
            self.inner.epoch_id,
            self.inner.region_id,
            self.inner.len()
        )
    }
}

/// A trained error estimator with its fitted elevation model.
#[pyclass(name = "Model", frozen, module = "gnss_regulator")]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TrainedModel::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Trains on labeled epochs. The result depends only on the arguments.
    #[staticmethod]
    #[pyo3(signature = (epochs, iterations = 10_000, seed = 0, hidden = 64, batch_size = 32))]
    fn train(
        py: Python<'_>,
        epochs: Vec<PyRef<'_, PyEpoch>>,
        iterations: usize,
        seed: u64,
        hidden: usize,
        batch_size: usize,
    ) -> PyResult<Self> {
        let epochs: Vec<Epoch> = epochs.iter().map(|e| e.inner.clone()).collect();
        let cfg = TrainConfig {
            iterations,
            seed,
            hidden,
            batch_size,
            ..TrainConfig::default()
        };
        let inner = py
            .detach(|| -> gnss_regulator::Result<TrainedModel> {
                let outcome = train(&epochs, &cfg)?;
                let mut regions: Vec<String> = epochs.iter().map(|e| e.region_id.clone()).collect();
                regions.sort();
                regions.dedup();
                Ok(TrainedModel {
                    params: outcome.params,
                    elevation_fit: Some(fit_elevation_model(&elevation_samples(&epochs)?)?),
                    provenance: Provenance {
                        train_regions: regions,
                        holdout: None,
                        seed,
                        iterations,
                        train_epochs: epochs.len(),
                    },
                })
            })
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Estimated measurement errors in meters.
    fn predict(&self, epoch: &PyEpoch) -> PyResult<Vec<f64>> {
        self.inner.params.predict(&epoch.inner).map_err(to_py)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.parameter_count()
    }
}

#[pyfunction]
fn load_epochs(path: PathBuf) -> PyResult<Vec<PyEpoch>> {
    Ok(simulator::read_epochs(&path)
        .map_err(to_py)?
        .into_iter()
        .map(|inner| PyEpoch { inner })
        .collect())
}

/// Writes a synthetic dataset and returns its region ids.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 0, epochs_per_region = 2000, config = None))]
fn generate_dataset(
    py: Python<'_>,
    out_dir: PathBuf,
    seed: u64,
    epochs_per_region: u64,
    config: Option<PathBuf>,
) -> PyResult<Vec<String>> {
    let mut spec = match config {
        Some(path) => DatasetSpec::load(&path).map_err(to_py)?,
        None => DatasetSpec::default_city(seed, epochs_per_region),
    };
    spec.seed = seed;
    let manifest = py
        .detach(|| simulator::generate_dataset(&spec, &out_dir))
        .map_err(to_py)?;
    Ok(manifest.regions.into_iter().map(|r| r.region_id).collect())
}

/// Region id to epochs, in manifest order.
#[pyfunction]
fn load_dataset(py: Python<'_>, dir: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    let ds = simulator::load_dataset(&dir).map_err(to_py)?;
    let out = PyDict::new(py);
    for (region, epochs) in ds.regions {
        let list: Vec<PyEpoch> = epochs.into_iter().map(|inner| PyEpoch { inner }).collect();
        out.set_item(region, list)?;
    }
    Ok(out)
}

/// Iterative weighted least squares from the initial guess.
#[pyfunction]
#[pyo3(signature = (epoch, weights = None))]
fn wls_solve<'py>(py: Python<'py>, epoch: &PyEpoch, weights: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let e = &epoch.inner;
    let w = weights.unwrap_or_else(|| vec![1.0; e.len()]);
    let start = initial_state(e).map_err(to_py)?;
    let sol = solver::wls_solve(e, &w, start, &WlsConfig::default()).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("position", (sol.state.pos.x, sol.state.pos.y, sol.state.pos.z))?;
    out.set_item("clock_bias", sol.state.clock_bias)?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("converged", sol.converged())?;
    if let Some(truth) = e.truth {
        out.set_item("horizontal_error", solver::horizontal_error(&sol.state, &truth))?;
    }
    Ok(out)
}

/// Weights that make the truth stationary given the errors, geometry taken
/// at the initial state.
#[pyfunction]
fn regulate_weights(epoch: &PyEpoch, errors: Vec<f64>) -> PyResult<Vec<f64>> {
    let start = initial_state(&epoch.inner).map_err(to_py)?;
    let h = solver::geometry_matrix(&epoch.inner, &start).map_err(to_py)?;
    regulator::regulate_weights(&h, &errors).map_err(to_py)
}

#[pyfunction]
fn regulate_measurements(epoch: &PyEpoch, errors: Vec<f64>) -> PyResult<PyEpoch> {
    Ok(PyEpoch {
        inner: regulator::regulate_measurements(&epoch.inner, &errors).map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (e_hat, n_req = 10, lower = -15.0, upper = 15.0, step = 5.0))]
fn select_measurements(e_hat: Vec<f64>, n_req: usize, lower: f64, upper: f64, step: f64) -> PyResult<Vec<bool>> {
    let cfg = SelectorConfig {
        n_req,
        lower,
        upper,
        step,
    };
    cfg.validate().map_err(to_py)?;
    Ok(gnss_regulator::selector::select_measurements(&e_hat, &cfg).mask)
}

#[pyfunction]
fn percentile(values: Vec<f64>, p: f64) -> PyResult<f64> {
    eval::percentile(&values, p).map_err(to_py)
}

fn pipeline(method_name: &str, selector: bool) -> PyResult<PipelineSpec> {
    let mut spec = PipelineSpec::new(method(method_name)?);
    spec.use_selector = selector;
    Ok(spec)
}

fn estimators<'a>(model: Option<&'a PyModel>, oracle: bool) -> Estimators<'a> {
    let fit = model.and_then(|m| m.inner.elevation_fit.as_ref());
    let errors = match (model, oracle) {
        (_, true) => ErrorSource::Oracle,
        (Some(m), false) => ErrorSource::Model(&m.inner),
        (None, false) => ErrorSource::None,
    };
    Estimators {
        errors,
        elevation_fit: fit,
    }
}

/// Runs the full pipeline on one epoch.
#[pyfunction]
#[pyo3(signature = (epoch, method, model = None, selector = false))]
fn localize<'py>(
    py: Python<'py>,
    epoch: &PyEpoch,
    method: &str,
    model: Option<PyRef<'py, PyModel>>,
    selector: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = pipeline(method, selector)?;
    let fix = eval::localize(&epoch.inner, &spec, &estimators(model.as_deref(), false)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("position", (fix.state.pos.x, fix.state.pos.y, fix.state.pos.z))?;
    out.set_item("clock_bias", fix.state.clock_bias)?;
    out.set_item("status", serde_json::to_value(fix.status).unwrap().as_str().unwrap_or_default())?;
    out.set_item("used", fix.used)?;
    out.set_item("error_estimates", fix.error_estimates)?;
    Ok(out)
}

/// Scores a method on labeled epochs.
#[pyfunction]
#[pyo3(signature = (epochs, method, model = None, selector = false, oracle_errors = false))]
fn evaluate<'py>(
    py: Python<'py>,
    epochs: Vec<PyRef<'py, PyEpoch>>,
    method: &str,
    model: Option<PyRef<'py, PyModel>>,
    selector: bool,
    oracle_errors: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = pipeline(method, selector)?;
    let epochs: Vec<Epoch> = epochs.iter().map(|e| e.inner.clone()).collect();
    let est = estimators(model.as_deref(), oracle_errors);
    let report = eval::run_pipeline_with(&spec, &epochs, &est).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("p50", report.p50)?;
    out.set_item("p95", report.p95)?;
    out.set_item("nonconverged", report.nonconverged)?;
    out.set_item("horizontal_errors", report.horizontal_errors())?;
    if let Some(s) = report.error_stats {
        out.set_item("mean_abs_error_pre", s.mean_abs_pre)?;
        out.set_item("mean_abs_error_post", s.mean_abs_post)?;
    }
    Ok(out)
}

#[pymodule]
#[pyo3(name = "gnss_regulator")]
fn gnss_regulator_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEpoch>()?;
    m.add_class::<PyModel>()?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(load_epochs, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(wls_solve, m)?)?;
    m.add_function(wrap_pyfunction!(regulate_weights, m)?)?;
    m.add_function(wrap_pyfunction!(regulate_measurements, m)?)?;
    m.add_function(wrap_pyfunction!(select_measurements, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
