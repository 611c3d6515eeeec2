//! Python bindings: configuration, sweeps, single trials and the tensor kernels.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rfftensor::crlb::scene_crlb;
use rfftensor::estimators::{EstimationInput, Estimate, Method};
use rfftensor::harness::{self, ExperimentConfig, ResultRow, SweepAxis};
use rfftensor::linalg::khatri_rao as kr;
use rfftensor::scene::ReceivedTensor;
use rfftensor::{CMat, CTensor3, Mode, C64};

fn py_err(e: rfftensor::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_methods(names: &[String]) -> PyResult<Vec<Method>> {
    names.iter().map(|n| n.parse::<Method>().map_err(py_err)).collect()
}

fn parse_axis(axis: &str) -> PyResult<SweepAxis> {
    match axis {
        "snr_db" | "snr" => Ok(SweepAxis::SnrDb),
        "amplitude_scale" | "amplitude" => Ok(SweepAxis::AmplitudeScale),
        "phase_scale" | "phase" => Ok(SweepAxis::PhaseScale),
        other => Err(PyValueError::new_err(format!("unknown sweep axis `{other}`"))),
    }
}

fn parse_mode(mode: u8) -> PyResult<Mode> {
    Mode::try_from(mode).map_err(py_err)
}

fn to_rows(m: &CMat) -> Vec<Vec<C64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<C64>]) -> PyResult<CMat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(CMat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------------------

#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml(text).map(|inner| Self { inner }).map_err(py_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.run.trials
    }

    #[setter]
    fn set_trials(&mut self, trials: usize) -> PyResult<()> {
        if trials == 0 {
            return Err(PyValueError::new_err("trials must be at least 1"));
        }
        self.inner.run.trials = trials;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.run.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.run.seed = seed;
    }

    #[getter]
    fn methods(&self) -> Vec<String> {
        self.inner.run.methods.iter().map(|m| m.to_string()).collect()
    }

    #[setter]
    fn set_methods(&mut self, names: Vec<String>) -> PyResult<()> {
        let methods = parse_methods(&names)?;
        if methods.is_empty() {
            return Err(PyValueError::new_err("methods must not be empty"));
        }
        self.inner.run.methods = methods;
        Ok(())
    }

    #[getter]
    fn snr_db(&self) -> Vec<f64> {
        self.inner.sweep.snr_db.clone()
    }

    #[setter]
    fn set_snr_db(&mut self, values: Vec<f64>) {
        self.inner.sweep.snr_db = values;
    }

    #[getter]
    fn noiseless(&self) -> bool {
        self.inner.scene.noiseless
    }

    #[setter]
    fn set_noiseless(&mut self, value: bool) {
        self.inner.scene.noiseless = value;
    }

    #[getter]
    fn crlb(&self) -> bool {
        self.inner.run.crlb
    }

    #[setter]
    fn set_crlb(&mut self, value: bool) {
        self.inner.run.crlb = value;
    }

    fn __repr__(&self) -> String {
        let paths: usize = self.inner.devices.iter().map(|d| d.doas_deg.len()).sum();
        format!(
            "ExperimentConfig(devices={}, paths={paths}, trials={}, seed={})",
            self.inner.devices.len(),
            self.inner.run.trials,
            self.inner.run.seed
        )
    }
}

fn row_dict<'py>(py: Python<'py>, r: &ResultRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &r.method)?;
    d.set_item("sweep_axis", r.sweep_axis.as_str())?;
    d.set_item("sweep_value", r.sweep_value)?;
    d.set_item("rmse_theta_deg", r.rmse_theta_deg)?;
    d.set_item("rmse_z", r.rmse_z)?;
    d.set_item("crlb_sqrt_theta_deg", r.crlb_sqrt_theta_deg)?;
    d.set_item("crlb_sqrt_z", r.crlb_sqrt_z)?;
    d.set_item("mean_iters", r.mean_iters)?;
    d.set_item("fail_rate", r.fail_rate)?;
    d.set_item("trials", r.trials)?;
    d.set_item("seed", r.seed)?;
    Ok(d)
}

/// Result rows of a sweep as dictionaries keyed like the CSV columns.
#[pyfunction]
#[pyo3(signature = (config, axis = "snr_db", jobs = None))]
fn run_sweep<'py>(py: Python<'py>, config: &PyConfig, axis: &str, jobs: Option<usize>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = harness::run_sweep(&config.inner, parse_axis(axis)?, jobs).map_err(py_err)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

#[pyfunction]
#[pyo3(signature = (config, jobs = None))]
fn run_crlb_only<'py>(py: Python<'py>, config: &PyConfig, jobs: Option<usize>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = harness::run_crlb_only(&config.inner, jobs).map_err(py_err)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

/// `(sweep_value, trial, iteration, loss, stop_reason)` tuples.
#[pyfunction]
#[pyo3(signature = (config, jobs = None))]
fn run_convergence(config: &PyConfig, jobs: Option<usize>) -> PyResult<Vec<(f64, usize, usize, f64, String)>> {
    let report = harness::run_convergence(&config.inner, jobs).map_err(py_err)?;
    Ok(report
        .rows
        .iter()
        .map(|r| (r.sweep_value, r.trial, r.iteration, r.loss, r.stop_reason.as_str().to_string()))
        .collect())
}

// ---------------------------------------------------------------------------

#[pyclass(name = "Estimate", skip_from_py_object)]
struct PyEstimate {
    inner: Estimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    /// Angles in degrees.
    #[getter]
    fn theta_deg(&self) -> Vec<f64> {
        self.inner.theta.iter().map(|t| t.to_degrees()).collect()
    }

    #[getter]
    fn z(&self) -> Vec<Vec<C64>> {
        self.inner.z.iter().map(|z| z.iter().copied().collect()).collect()
    }

    #[getter]
    fn gamma(&self) -> Vec<Vec<C64>> {
        to_rows(&self.inner.gamma)
    }

    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.inner.trace.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn stop(&self) -> &'static str {
        self.inner.stop.as_str()
    }
}

/// One simulated received cube with its ground truth.
#[pyclass(name = "Trial", skip_from_py_object)]
struct PyTrial {
    rx: ReceivedTensor,
    config: ExperimentConfig,
}

#[pymethods]
impl PyTrial {
    #[new]
    #[pyo3(signature = (config, snr_db, trial = 0))]
    fn new(config: &PyConfig, snr_db: f64, trial: usize) -> PyResult<Self> {
        let spec = config.inner.scene_spec().map_err(py_err)?;
        let rx = harness::realize_trial(&spec, snr_db, config.inner.run.seed, trial).map_err(py_err)?;
        Ok(Self { rx, config: config.inner.clone() })
    }

    /// `(J, Q, M)`: snapshots, antennas, blocks.
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        self.rx.data.dims()
    }

    #[getter]
    fn true_theta_deg(&self) -> Vec<f64> {
        self.rx.scene.paths.flat().iter().map(|t| t.to_degrees()).collect()
    }

    /// Per-device feature vectors in the estimator's gauge.
    #[getter]
    fn true_z(&self) -> Vec<Vec<C64>> {
        self.rx.scene.normalized_truth().0.iter().map(|z| z.iter().copied().collect()).collect()
    }

    fn unfold(&self, mode: u8) -> PyResult<Vec<Vec<C64>>> {
        Ok(to_rows(&self.rx.data.unfold(parse_mode(mode)?)))
    }

    fn estimate(&self, method: &str) -> PyResult<PyEstimate> {
        let m: Method = method.parse().map_err(py_err)?;
        let input = EstimationInput::from_received(&self.rx).map_err(py_err)?;
        let inner = harness::run_method(m, &input, &self.config).map_err(py_err)?;
        Ok(PyEstimate { inner })
    }

    /// `(sqrt(Σ CRLB(θ)) in degrees, sqrt(Σ CRLB(z̄)))`.
    fn crlb(&self) -> PyResult<(f64, f64)> {
        let scene = &self.rx.scene;
        if scene.noise_var <= 0.0 {
            return Err(PyValueError::new_err("the CRLB needs a noisy scene"));
        }
        let b = scene_crlb(scene, scene.noise_var).map_err(py_err)?;
        Ok((b.sqrt_theta_deg(), b.sqrt_z()))
    }
}

// ---------------------------------------------------------------------------

/// Column-wise Kronecker product of two row-major complex matrices.
#[pyfunction]
fn khatri_rao(a: Vec<Vec<C64>>, b: Vec<Vec<C64>>) -> PyResult<Vec<Vec<C64>>> {
    let out = kr(&from_rows(&a)?, &from_rows(&b)?).map_err(py_err)?;
    Ok(to_rows(&out))
}

fn tensor_from_nested(t: &[Vec<Vec<C64>>]) -> PyResult<CTensor3> {
    let j = t.len();
    let q = t.first().map_or(0, Vec::len);
    let m = t.first().and_then(|r| r.first()).map_or(0, Vec::len);
    if t.iter().any(|r| r.len() != q || r.iter().any(|c| c.len() != m)) {
        return Err(PyValueError::new_err("ragged tensor"));
    }
    Ok(CTensor3::from_fn((j, q, m), |a, b, c| t[a][b][c]))
}

/// Unfolds a nested `[j][q][m]` cube along `mode` (1, 2 or 3).
#[pyfunction]
fn unfold(tensor: Vec<Vec<Vec<C64>>>, mode: u8) -> PyResult<Vec<Vec<C64>>> {
    Ok(to_rows(&tensor_from_nested(&tensor)?.unfold(parse_mode(mode)?)))
}

/// Inverse of [`unfold`] for a cube of shape `dims = (J, Q, M)`.
#[pyfunction]
fn fold(matrix: Vec<Vec<C64>>, mode: u8, dims: (usize, usize, usize)) -> PyResult<Vec<Vec<Vec<C64>>>> {
    let t = CTensor3::fold(&from_rows(&matrix)?, parse_mode(mode)?, dims).map_err(py_err)?;
    Ok((0..dims.0).map(|j| (0..dims.1).map(|q| (0..dims.2).map(|m| t.get(j, q, m)).collect()).collect()).collect())
}

#[pymodule]
fn rfftensor_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrial>()?;
    m.add_class::<PyEstimate>()?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_crlb_only, m)?)?;
    m.add_function(wrap_pyfunction!(run_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(khatri_rao, m)?)?;
    m.add_function(wrap_pyfunction!(unfold, m)?)?;
    m.add_function(wrap_pyfunction!(fold, m)?)?;
    m.add("CSV_HEADER", harness::RESULT_HEADER)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names() {
        assert_eq!(parse_axis("snr").unwrap(), SweepAxis::SnrDb);
        assert_eq!(parse_axis("phase_scale").unwrap(), SweepAxis::PhaseScale);
        assert!(parse_axis("time").is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let rows = vec![vec![C64::new(1.0, 2.0), C64::new(0.0, -1.0)], vec![C64::new(3.0, 0.0), C64::new(0.5, 0.5)]];
        assert_eq!(to_rows(&from_rows(&rows).unwrap()), rows);
        assert!(from_rows(&[vec![C64::new(1.0, 0.0)], vec![]]).is_err());
    }

    #[test]
    fn nested_tensor_layout() {
        let t: Vec<Vec<Vec<C64>>> = (0..2)
            .map(|j| (0..3).map(|q| (0..4).map(|m| C64::new(j as f64, (q * 10 + m) as f64)).collect()).collect())
            .collect();
        let cube = tensor_from_nested(&t).unwrap();
        assert_eq!(cube.dims(), (2, 3, 4));
        assert_eq!(cube.get(1, 2, 3), C64::new(1.0, 23.0));
    }
}
