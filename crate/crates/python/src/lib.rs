//! Python bindings: the four regressors, the stacked ensemble, the nMAE
//! report, the end-to-end pipeline and the oracle suite.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pvcast_core::config::RunConfig;
use pvcast_core::ensemble::{self, EnsembleWeights, FitOptions};
use pvcast_core::ingest::parse_timestamp;
use pvcast_core::knn::{BandwidthRule, KnnModel};
use pvcast_core::metrics::{self, ErrorReport};
use pvcast_core::nn::{self, NnModel, NnTrainConfig, Weights};
use pvcast_core::pipeline::{self, PipelineError};
use pvcast_core::qrf::{QrfConfig, QrfModel};
use pvcast_core::suite::{self, SuiteOptions};
use pvcast_core::svr::{self, SvrConfig, SvrModel};
use pvcast_core::synthetic::{self, SyntheticSpec};
use pvcast_core::Matrix;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    PyRuntimeError::new_err(format!("{e} (exit code {})", e.exit_code()))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(Matrix::from_rows(rows))
}

fn check_width(x: &Matrix, expected: usize) -> PyResult<()> {
    if x.ncols() != expected && !x.is_empty() {
        return Err(PyValueError::new_err(format!(
            "expected {expected} features, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

fn fitted<T>(model: &Option<T>) -> PyResult<&T> {
    model
        .as_ref()
        .ok_or_else(|| PyRuntimeError::new_err("model is not fitted"))
}

/// Gaussian-weighted k-nearest-neighbour regressor on pre-scaled inputs.
#[pyclass(name = "KnnRegressor")]
struct PyKnn {
    k: usize,
    sigma: Option<f64>,
    model: Option<KnnModel>,
}

#[pymethods]
impl PyKnn {
    #[new]
    #[pyo3(signature = (k = 300, sigma = None))]
    fn new(k: usize, sigma: Option<f64>) -> Self {
        Self {
            k,
            sigma,
            model: None,
        }
    }

    fn fit(&mut self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<()> {
        let x = matrix(&x)?;
        if x.nrows() != y.len() {
            return Err(PyValueError::new_err("x and y lengths differ"));
        }
        let bandwidth = match self.sigma {
            Some(s) => BandwidthRule::Fixed(s),
            None => BandwidthRule::MedianNeighbourDistance,
        };
        self.model = Some(KnnModel::new(x, y, self.k, bandwidth).map_err(value_err)?);
        Ok(())
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let model = fitted(&self.model)?;
        let x = matrix(&x)?;
        check_width(&x, model.n_features())?;
        Ok(model.predict_batch(&x))
    }
}

/// Quantile regression forest.
#[pyclass(name = "QuantileForest")]
struct PyQrf {
    config: QrfConfig,
    model: Option<QrfModel>,
}

#[pymethods]
impl PyQrf {
    #[new]
    #[pyo3(signature = (n_trees = 300, min_samples_leaf = 5, mtry = None, quantile = 0.4, bootstrap = true, seed = 42))]
    fn new(
        n_trees: usize,
        min_samples_leaf: usize,
        mtry: Option<usize>,
        quantile: f64,
        bootstrap: bool,
        seed: u64,
    ) -> Self {
        let config = QrfConfig {
            n_trees,
            min_samples_leaf,
            mtry,
            quantile,
            bootstrap,
            seed,
        };
        Self {
            config,
            model: None,
        }
    }

    fn fit(&mut self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<()> {
        let x = matrix(&x)?;
        if x.nrows() != y.len() {
            return Err(PyValueError::new_err("x and y lengths differ"));
        }
        self.model = Some(QrfModel::fit(&x, &y, &self.config).map_err(value_err)?);
        Ok(())
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let model = fitted(&self.model)?;
        let x = matrix(&x)?;
        check_width(&x, model.n_features())?;
        Ok(model.predict_batch(&x))
    }

    fn predict_quantile(&self, x: Vec<f64>, q: f64) -> PyResult<f64> {
        let model = fitted(&self.model)?;
        if x.len() != model.n_features() {
            return Err(PyValueError::new_err("wrong feature count"));
        }
        model.predict_quantile(&x, q).map_err(value_err)
    }
}

/// ν-support-vector regression with a Gaussian kernel.
#[pyclass(name = "NuSvr")]
struct PySvr {
    config: SvrConfig,
    model: Option<SvrModel>,
}

#[pymethods]
impl PySvr {
    #[new]
    #[pyo3(signature = (nu = 0.5, gamma = 1.25, c = 1.0, tol = 1e-3, max_iter = 100_000))]
    fn new(nu: f64, gamma: f64, c: f64, tol: f64, max_iter: usize) -> Self {
        let config = SvrConfig {
            nu,
            gamma,
            c,
            tol,
            max_iter,
        };
        Self {
            config,
            model: None,
        }
    }

    fn fit(&mut self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<()> {
        let x = matrix(&x)?;
        if x.nrows() != y.len() {
            return Err(PyValueError::new_err("x and y lengths differ"));
        }
        self.model = Some(svr::fit_arrays(&x, &y, &self.config).map_err(value_err)?);
        Ok(())
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let model = fitted(&self.model)?;
        let x = matrix(&x)?;
        check_width(&x, model.n_features())?;
        Ok(model.predict_batch(&x))
    }

    #[getter]
    fn bias(&self) -> PyResult<f64> {
        Ok(fitted(&self.model)?.bias())
    }

    #[getter]
    fn epsilon(&self) -> PyResult<f64> {
        Ok(fitted(&self.model)?.epsilon())
    }

    #[getter]
    fn n_support(&self) -> PyResult<usize> {
        Ok(fitted(&self.model)?.n_support())
    }
}

/// Single-input 1-3-1 network trained by Levenberg-Marquardt with Bayesian
/// regularisation.
#[pyclass(name = "BayesianNet")]
struct PyNn {
    config: NnTrainConfig,
    model: Option<NnModel>,
}

#[pymethods]
impl PyNn {
    #[new]
    #[pyo3(signature = (max_epochs = 300, seed = 42))]
    fn new(max_epochs: usize, seed: u64) -> Self {
        let config = NnTrainConfig {
            max_epochs,
            seed,
            ..NnTrainConfig::default()
        };
        Self {
            config,
            model: None,
        }
    }

    fn fit(&mut self, x: Vec<f64>, y: Vec<f64>) -> PyResult<()> {
        if x.len() != y.len() || x.is_empty() {
            return Err(PyValueError::new_err(
                "x and y must be non-empty and equal length",
            ));
        }
        self.config.validate().map_err(value_err)?;
        let init = Weights::random(self.config.seed);
        self.model = Some(nn::fit_arrays(&x, &y, init, &self.config));
        Ok(())
    }

    /// Continues training from the current weights on a new window.
    fn refit(&mut self, x: Vec<f64>, y: Vec<f64>) -> PyResult<()> {
        if x.len() != y.len() || x.is_empty() {
            return Err(PyValueError::new_err(
                "x and y must be non-empty and equal length",
            ));
        }
        let model = fitted(&self.model)?;
        self.model = Some(nn::refit_arrays(model, &x, &y, &self.config));
        Ok(())
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(fitted(&self.model)?.predict_batch(&x))
    }

    #[getter]
    fn alpha(&self) -> PyResult<f64> {
        Ok(fitted(&self.model)?.alpha())
    }

    #[getter]
    fn beta(&self) -> PyResult<f64> {
        Ok(fitted(&self.model)?.beta())
    }

    #[getter]
    fn gamma_eff(&self) -> PyResult<f64> {
        Ok(fitted(&self.model)?.gamma_eff())
    }
}

/// Least-squares stacking weights over member predictions.
#[pyclass(name = "Ensemble")]
struct PyEnsemble {
    weights: EnsembleWeights,
}

#[pymethods]
impl PyEnsemble {
    /// `p` holds one row per sample and one column per member.
    #[staticmethod]
    #[pyo3(signature = (p, y, members, intercept = false, clip = true))]
    fn fit(
        p: Vec<Vec<f64>>,
        y: Vec<f64>,
        members: Vec<String>,
        intercept: bool,
        clip: bool,
    ) -> PyResult<Self> {
        let p = matrix(&p)?;
        let weights = ensemble::fit_weights(&p, &y, &members, FitOptions { intercept, clip })
            .map_err(value_err)?;
        Ok(Self { weights })
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.weights.weights().to_vec()
    }

    #[getter]
    fn members(&self) -> Vec<String> {
        self.weights.member_names().to_vec()
    }

    fn predict(&self, p: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let p = matrix(&p)?;
        check_width(&p, self.weights.member_names().len())?;
        self.weights.predict_batch(&p).map_err(value_err)
    }
}

/// Daily and weekly nMAE per model.
#[pyclass(name = "ErrorReport")]
struct PyReport {
    report: ErrorReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn days(&self) -> Vec<String> {
        self.report.days().iter().map(|d| d.to_string()).collect()
    }

    #[getter]
    fn models(&self) -> Vec<String> {
        self.report.models().to_vec()
    }

    fn daily(&self, model: &str) -> PyResult<Vec<f64>> {
        self.report
            .daily(model)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("unknown model `{model}`")))
    }

    fn weekly(&self, model: &str) -> PyResult<f64> {
        self.report
            .weekly(model)
            .ok_or_else(|| PyValueError::new_err(format!("unknown model `{model}`")))
    }

    fn to_csv(&self) -> String {
        self.report.to_csv()
    }

    fn __str__(&self) -> String {
        self.report.to_text()
    }
}

/// Mean absolute error as a percentage of capacity.
#[pyfunction]
#[pyo3(signature = (pred, actual, capacity = 1.0))]
fn nmae(pred: Vec<f64>, actual: Vec<f64>, capacity: f64) -> PyResult<f64> {
    metrics::nmae(&pred, &actual, capacity).map_err(value_err)
}

/// Groups hourly rows by calendar day; `models` maps names to predictions.
#[pyfunction]
#[pyo3(signature = (timestamps, actual, models, days, capacity = 1.0))]
fn daily_weekly_report(
    timestamps: Vec<String>,
    actual: Vec<f64>,
    models: Vec<(String, Vec<f64>)>,
    days: Vec<String>,
    capacity: f64,
) -> PyResult<PyReport> {
    let timestamps = timestamps
        .iter()
        .map(|s| parse_timestamp(s).ok_or_else(|| value_err(format!("bad timestamp `{s}`"))))
        .collect::<PyResult<Vec<_>>>()?;
    let days = days
        .iter()
        .map(|s| chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(value_err))
        .collect::<PyResult<Vec<_>>>()?;
    let report = metrics::daily_weekly_report(&timestamps, &actual, &models, &days, capacity)
        .map_err(value_err)?;
    Ok(PyReport { report })
}

fn run_config(config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<RunConfig> {
    let cfg = match config {
        Some(path) => RunConfig::load(&path, &overrides),
        None => RunConfig::from_toml_with_overrides("", &overrides),
    }
    .map_err(value_err)?;
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Trains every model and writes the artifacts under `output_dir/models`.
#[pyfunction]
#[pyo3(signature = (config = None, overrides = Vec::new()))]
fn train(py: Python<'_>, config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<()> {
    let cfg = run_config(config, overrides)?;
    py.detach(|| pipeline::run_train(&cfg))
        .map(|_| ())
        .map_err(pipeline_err)
}

/// Predicts the test days from saved artifacts and writes the error tables.
#[pyfunction]
#[pyo3(signature = (config = None, overrides = Vec::new()))]
fn evaluate(py: Python<'_>, config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<PyReport> {
    let cfg = run_config(config, overrides)?;
    let report = py
        .detach(|| pipeline::run_evaluate(&cfg))
        .map_err(pipeline_err)?;
    Ok(PyReport { report })
}

/// Runs the brute-force oracle checks; one dict per check.
#[pyfunction]
#[pyo3(signature = (seed = 42, tolerance_scale = 1.0))]
fn oracle<'py>(
    py: Python<'py>,
    seed: u64,
    tolerance_scale: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let options = SuiteOptions {
        seed,
        tolerance_scale,
    };
    let results = py.detach(|| suite::run_all(&options));
    results
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("passed", r.passed)?;
            d.set_item("instances", r.instances)?;
            d.set_item("max_deviation", r.max_deviation)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("detail", r.detail)?;
            Ok(d)
        })
        .collect()
}

/// Writes synthetic `weather.csv` and `power.csv` into `out`.
#[pyfunction]
#[pyo3(signature = (out, seed = 42, start = "2013-01-01T00:00".to_string(), hours = None, accumulated = false))]
fn write_synthetic(
    out: PathBuf,
    seed: u64,
    start: String,
    hours: Option<usize>,
    accumulated: bool,
) -> PyResult<()> {
    let start = parse_timestamp(&start).ok_or_else(|| value_err("bad start timestamp"))?;
    let default = SyntheticSpec::protocol_span(seed);
    let spec = SyntheticSpec {
        start,
        hours: hours.unwrap_or(default.hours),
        accumulated,
        ..default
    };
    synthetic::write_files(&spec, &out).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn pvcast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKnn>()?;
    m.add_class::<PyQrf>()?;
    m.add_class::<PySvr>()?;
    m.add_class::<PyNn>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(nmae, m)?)?;
    m.add_function(wrap_pyfunction!(daily_weekly_report, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic, m)?)?;
    Ok(())
}
