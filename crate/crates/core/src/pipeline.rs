//! End-to-end flow: load, split, scale, train, predict, score.
//!
//! The base models are trained on the train block. Ensemble weights are fit
//! on their validation-block predictions. Test-day forecasts come from the
//! same models, except the network, which is warm-started and refit on the
//! history before each test week when `nn.refit_weekly` is set.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::config::{ConfigError, RunConfig, MODEL_NAMES};
use crate::dataset::Dataset;
use crate::ensemble::{self, EnsembleError, EnsembleWeights, FitOptions};
use crate::ingest::{self, format_timestamp, parse_timestamp, IngestError, Partitions};
use crate::knn::{self, KnnError, KnnModel};
use crate::matrix::Matrix;
use crate::metrics::{self, ErrorReport, MetricsError};
use crate::nn::{self, NnError, NnModel};
use crate::preprocess::{fit_normalizer, Normalizer, PreprocessError};
use crate::qrf::{QrfError, QrfModel};
use crate::svr::{self, SvrError, SvrModel};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const NMAE_CSV_FILE: &str = "nmae.csv";
pub const NMAE_TEXT_FILE: &str = "nmae.txt";
pub const MODELS_DIR: &str = "models";

/// Column order of the predictions file after `timestamp` and `actual`.
pub const PREDICTION_COLUMNS: [&str; 5] = ["nn", "knn", "qrf", "svr", "ens"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {message}")]
    Failure {
        kind: ErrorKind,
        context: String,
        message: String,
    },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Config(_) => ErrorKind::Config,
            PipelineError::Failure { kind, .. } => *kind,
            PipelineError::Artifact(_) | PipelineError::Io { .. } => ErrorKind::Data,
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

fn failure(kind: ErrorKind, context: impl Into<String>, e: impl ToString) -> PipelineError {
    PipelineError::Failure {
        kind,
        context: context.into(),
        message: e.to_string(),
    }
}

fn data_err(context: impl Into<String>, e: impl ToString) -> PipelineError {
    failure(ErrorKind::Data, context, e)
}

fn knn_err(e: KnnError) -> PipelineError {
    let kind = match e {
        KnnError::KTooLarge { .. } | KnnError::ZeroK | KnnError::BadBandwidth(_) => {
            ErrorKind::Config
        }
        KnnError::NotNormalized | KnnError::NonFinite => ErrorKind::Data,
    };
    failure(kind, "knn", e)
}

fn qrf_err(e: QrfError) -> PipelineError {
    let kind = match e {
        QrfError::BadQuantile(_) | QrfError::BadConfig(_) => ErrorKind::Config,
        QrfError::TooFewSamples { .. } | QrfError::NonFinite => ErrorKind::Data,
        _ => ErrorKind::Numerical,
    };
    failure(kind, "qrf", e)
}

fn svr_err(e: SvrError) -> PipelineError {
    let kind = match e {
        SvrError::BadConfig(_) => ErrorKind::Config,
        SvrError::TooFewSamples(_)
        | SvrError::DegenerateKernel
        | SvrError::NonFinite
        | SvrError::NotNormalized => ErrorKind::Data,
        SvrError::NoConvergence { .. } => ErrorKind::Numerical,
    };
    failure(kind, "svr", e)
}

fn nn_err(e: NnError) -> PipelineError {
    let kind = match e {
        NnError::BadConfig(_) | NnError::FeatureCount(_) => ErrorKind::Config,
        _ => ErrorKind::Data,
    };
    failure(kind, "nn", e)
}

fn ensemble_err(e: EnsembleError) -> PipelineError {
    let kind = match e {
        EnsembleError::Decomposition(_) => ErrorKind::Numerical,
        EnsembleError::NoMembers | EnsembleError::MemberMismatch { .. } => ErrorKind::Config,
        _ => ErrorKind::Data,
    };
    failure(kind, "ensemble", e)
}

fn preprocess_err(e: PreprocessError) -> PipelineError {
    data_err("preprocess", e)
}

fn metrics_err(e: MetricsError) -> PipelineError {
    data_err("metrics", e)
}

/// Weather and power joined on timestamp, all twelve variables, unscaled.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset, PipelineError> {
    let columns = config.column_map()?;
    let in_file = |path: &Path| {
        let path = path.display().to_string();
        move |e: IngestError| data_err(path.clone(), e)
    };
    let mut weather = ingest::load_weather(&config.data.weather, config.data.zone, &columns)
        .map_err(in_file(&config.data.weather))?;
    if config.data.deaccumulate {
        weather = ingest::deaccumulate(&weather, config.data.run_start_hour);
    }
    let power = ingest::load_power(&config.data.power, config.data.zone)
        .map_err(in_file(&config.data.power))?;
    ingest::align(&weather, &power).map_err(|e| data_err("align", e))
}

fn partitions(config: &RunConfig, data: &Dataset) -> Result<Partitions, PipelineError> {
    let spec = config.split_spec()?;
    ingest::split(data, &spec).map_err(|e| data_err("split", e))
}

/// Feature scaling learned on the train block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub weather: Normalizer,
    pub nn: Normalizer,
}

impl Scaling {
    fn weather_view(&self, config: &RunConfig, data: &Dataset) -> Result<Dataset, PipelineError> {
        let selected = config
            .weather_features()?
            .apply(data)
            .map_err(preprocess_err)?;
        self.weather.transform(&selected).map_err(preprocess_err)
    }

    fn nn_view(&self, config: &RunConfig, data: &Dataset) -> Result<Dataset, PipelineError> {
        let selected = config.nn_features()?.apply(data).map_err(preprocess_err)?;
        self.nn.transform(&selected).map_err(preprocess_err)
    }
}

/// Everything `train` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub scaling: Scaling,
    pub nn: NnModel,
    pub knn: KnnModel,
    pub qrf: QrfModel,
    pub svr: SvrModel,
    pub ensemble: EnsembleWeights,
}

/// Base-model forecasts in [`MODEL_NAMES`] order.
fn base_columns(
    nn: &NnModel,
    knn: &KnnModel,
    qrf: &QrfModel,
    svr: &SvrModel,
    weather: &Matrix,
    nn_input: &[f64],
) -> Vec<Vec<f64>> {
    vec![
        nn.predict_batch(nn_input),
        knn.predict_batch(weather),
        qrf.predict_batch(weather),
        svr.predict_batch(weather),
    ]
}

fn member_columns(members: &[String], base: &[Vec<f64>]) -> Vec<Vec<f64>> {
    members
        .iter()
        .map(|m| {
            let i = MODEL_NAMES.iter().position(|n| n == m).expect("validated");
            base[i].clone()
        })
        .collect()
}

fn stack(columns: &[Vec<f64>]) -> Matrix {
    let m = columns.first().map_or(0, Vec::len);
    let k = columns.len();
    Matrix::from_vec(m, k, (0..m * k).map(|t| columns[t % k][t / k]).collect())
}

pub fn train(config: &RunConfig, data: &Dataset) -> Result<Models, PipelineError> {
    config.validate()?;
    let parts = partitions(config, data)?;
    let weather_spec = config.weather_features()?;
    let nn_spec = config.nn_features()?;
    let scaling = Scaling {
        weather: fit_normalizer(&weather_spec.apply(&parts.train).map_err(preprocess_err)?)
            .map_err(preprocess_err)?,
        nn: fit_normalizer(&nn_spec.apply(&parts.train).map_err(preprocess_err)?)
            .map_err(preprocess_err)?,
    };
    let train_w = scaling.weather_view(config, &parts.train)?;
    let train_nn = scaling.nn_view(config, &parts.train)?;

    let ((knn, qrf), (svr, nn)) = rayon::join(
        || {
            rayon::join(
                || knn::knn_fit_with(&train_w, config.knn.k, config.knn.bandwidth()),
                || crate::qrf::qrf_fit(&train_w, &config.qrf_config()),
            )
        },
        || {
            rayon::join(
                || svr::svr_fit(&train_w, &config.svr),
                || nn::nn_fit(&train_nn, &config.nn_config()),
            )
        },
    );
    let knn = knn.map_err(knn_err)?;
    let qrf = qrf.map_err(qrf_err)?;
    let svr = svr.map_err(svr_err)?;
    let nn = nn.map_err(nn_err)?;

    let val_w = scaling.weather_view(config, &parts.validation)?;
    let val_nn = scaling.nn_view(config, &parts.validation)?;
    let base = base_columns(
        &nn,
        &knn,
        &qrf,
        &svr,
        val_w.features(),
        &val_nn.features().column(0),
    );
    let columns = member_columns(&config.ensemble.members, &base);
    let options = FitOptions {
        intercept: config.ensemble.intercept,
        clip: config.ensemble.clip,
    };
    let ensemble = ensemble::fit_weights(
        &stack(&columns),
        parts.validation.target(),
        &config.ensemble.members,
        options,
    )
    .map_err(ensemble_err)?;
    Ok(Models {
        scaling,
        nn,
        knn,
        qrf,
        svr,
        ensemble,
    })
}

fn artifact_path(dir: &Path, kind: &str) -> PathBuf {
    dir.join(format!("{kind}.json"))
}

pub fn save_models(models: &Models, dir: &Path) -> Result<(), PipelineError> {
    artifact::save(&artifact_path(dir, "scaling"), "scaling", &models.scaling)?;
    artifact::save(&artifact_path(dir, "nn"), "nn", &models.nn)?;
    artifact::save(&artifact_path(dir, "knn"), "knn", &models.knn)?;
    artifact::save(&artifact_path(dir, "qrf"), "qrf", &models.qrf)?;
    artifact::save(&artifact_path(dir, "svr"), "svr", &models.svr)?;
    artifact::save(
        &artifact_path(dir, "ensemble"),
        "ensemble",
        &models.ensemble,
    )?;
    Ok(())
}

pub fn load_models(dir: &Path) -> Result<Models, PipelineError> {
    Ok(Models {
        scaling: artifact::load(&artifact_path(dir, "scaling"), "scaling")?,
        nn: artifact::load(&artifact_path(dir, "nn"), "nn")?,
        knn: artifact::load(&artifact_path(dir, "knn"), "knn")?,
        qrf: artifact::load(&artifact_path(dir, "qrf"), "qrf")?,
        svr: artifact::load(&artifact_path(dir, "svr"), "svr")?,
        ensemble: artifact::load(&artifact_path(dir, "ensemble"), "ensemble")?,
    })
}

/// Hourly test-day forecasts of every model.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub timestamps: Vec<NaiveDateTime>,
    pub actual: Vec<f64>,
    /// One column per entry of [`PREDICTION_COLUMNS`], in that order.
    pub columns: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = PREDICTION_COLUMNS.iter().position(|c| *c == name)?;
        Some(&self.columns[i])
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["timestamp", "actual"];
        header.extend(PREDICTION_COLUMNS);
        w.write_record(&header).expect("in-memory write");
        for (i, t) in self.timestamps.iter().enumerate() {
            let mut row = vec![format_timestamp(t), format!("{:.6}", self.actual[i])];
            row.extend(self.columns.iter().map(|c| format!("{:.6}", c[i])));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, PipelineError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| data_err("predictions", e))?
            .clone();
        let expected: Vec<&str> = ["timestamp", "actual"]
            .into_iter()
            .chain(PREDICTION_COLUMNS)
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(data_err(
                "predictions",
                format!("header must be `{}`", expected.join(",")),
            ));
        }
        let mut out = Predictions {
            timestamps: Vec::new(),
            actual: Vec::new(),
            columns: vec![Vec::new(); PREDICTION_COLUMNS.len()],
        };
        for (line, rec) in rdr.records().enumerate() {
            let at = format!("predictions line {}", line + 2);
            let rec = rec.map_err(|e| data_err(&at, e))?;
            let t = parse_timestamp(&rec[0])
                .ok_or_else(|| data_err(&at, format!("bad timestamp `{}`", &rec[0])))?;
            let num = |j: usize| {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| data_err(&at, format!("column {}: {e}", expected[j])))
            };
            out.timestamps.push(t);
            out.actual.push(num(1)?);
            for (c, col) in out.columns.iter_mut().enumerate() {
                col.push(num(c + 2)?);
            }
        }
        Ok(out)
    }
}

/// Network forecasts for the test rows, refit before each test week.
fn nn_test_forecast(
    config: &RunConfig,
    models: &Models,
    data: &Dataset,
    test: &Dataset,
) -> Result<Vec<f64>, PipelineError> {
    let test_x = models.scaling.nn_view(config, test)?.features().column(0);
    if !config.nn.refit_weekly {
        return Ok(models.nn.predict_batch(&test_x));
    }
    let days = config.split_spec()?.test_days().to_vec();
    let first = days[0];
    let mut out = vec![0.0; test.len()];
    let mut current = models.nn.clone();
    let mut week_start = None;
    for day in &days {
        let week = (*day - first).num_days() / 7;
        let start = first + Duration::days(week * 7);
        if week_start != Some(start) {
            week_start = Some(start);
            let cutoff = start.and_hms_opt(0, 0, 0).expect("midnight");
            let from = config
                .nn
                .refit_window_days
                .map(|d| cutoff - Duration::days(i64::from(d)));
            let idx: Vec<usize> = (0..data.len())
                .filter(|&i| {
                    let t = data.timestamps()[i];
                    t < cutoff && from.is_none_or(|f| t >= f)
                })
                .collect();
            let window = models.scaling.nn_view(config, &data.subset(&idx))?;
            current =
                nn::nn_refit_weekly(&current, &window, &config.nn_config()).map_err(nn_err)?;
        }
        for (i, t) in test.timestamps().iter().enumerate() {
            if t.date() == *day {
                out[i] = current.predict(test_x[i]);
            }
        }
    }
    Ok(out)
}

pub fn predict(
    config: &RunConfig,
    models: &Models,
    data: &Dataset,
) -> Result<Predictions, PipelineError> {
    config.validate()?;
    if models.ensemble.member_names() != config.ensemble.members.as_slice() {
        return Err(failure(
            ErrorKind::Config,
            "ensemble",
            format!(
                "stored members {:?} differ from configured {:?}",
                models.ensemble.member_names(),
                config.ensemble.members
            ),
        ));
    }
    let parts = partitions(config, data)?;
    let test = &parts.test;
    if test.is_empty() {
        return Err(data_err("split", "no test days configured"));
    }
    let test_w = models.scaling.weather_view(config, test)?;
    let mut columns = base_columns(
        &models.nn,
        &models.knn,
        &models.qrf,
        &models.svr,
        test_w.features(),
        &[],
    );
    columns[0] = nn_test_forecast(config, models, data, test)?;
    let members = member_columns(&config.ensemble.members, &columns);
    let ens = models
        .ensemble
        .predict_batch(&stack(&members))
        .map_err(ensemble_err)?;
    columns.push(ens);
    Ok(Predictions {
        timestamps: test.timestamps().to_vec(),
        actual: test.target().to_vec(),
        columns,
    })
}

/// Daily and weekly nMAE of the configured report models.
pub fn report(config: &RunConfig, preds: &Predictions) -> Result<ErrorReport, PipelineError> {
    let spec = config.split_spec()?;
    let series: Vec<(String, Vec<f64>)> = config
        .report
        .models
        .iter()
        .map(|m| {
            let col = preds.column(m).expect("validated model name");
            (m.clone(), col.to_vec())
        })
        .collect();
    metrics::daily_weekly_report(
        &preds.timestamps,
        &preds.actual,
        &series,
        spec.test_days(),
        config.data.capacity,
    )
    .map_err(metrics_err)
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

pub fn models_dir(config: &RunConfig) -> PathBuf {
    config.output_dir.join(MODELS_DIR)
}

/// Trains every model and writes the artifacts.
pub fn run_train(config: &RunConfig) -> Result<Models, PipelineError> {
    config.validate()?;
    let data = load_dataset(config)?;
    let models = train(config, &data)?;
    save_models(&models, &models_dir(config))?;
    Ok(models)
}

/// Loads the artifacts and writes the test-day predictions file.
pub fn run_predict(config: &RunConfig) -> Result<Predictions, PipelineError> {
    config.validate()?;
    let models = load_models(&models_dir(config))?;
    let data = load_dataset(config)?;
    let preds = predict(config, &models, &data)?;
    write(&config.output_dir.join(PREDICTIONS_FILE), &preds.to_csv())?;
    Ok(preds)
}

fn write_report(config: &RunConfig, report: &ErrorReport) -> Result<(), PipelineError> {
    write(&config.output_dir.join(NMAE_CSV_FILE), &report.to_csv())?;
    write(&config.output_dir.join(NMAE_TEXT_FILE), &report.to_text())
}

/// Predictions plus the error tables.
pub fn run_evaluate(config: &RunConfig) -> Result<ErrorReport, PipelineError> {
    let preds = run_predict(config)?;
    let report = report(config, &preds)?;
    write_report(config, &report)?;
    Ok(report)
}

/// Rebuilds the error tables from an existing predictions file.
pub fn run_report(
    config: &RunConfig,
    predictions: Option<&Path>,
) -> Result<ErrorReport, PipelineError> {
    config.validate()?;
    let path = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join(PREDICTIONS_FILE));
    let text = fs::read_to_string(&path).map_err(|source| PipelineError::Io {
        path: path.clone(),
        source,
    })?;
    let preds = Predictions::from_csv(&text)?;
    let report = report(config, &preds)?;
    write_report(config, &report)?;
    Ok(report)
}
