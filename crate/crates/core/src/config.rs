//! Run configuration: a TOML file plus `section.key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{parse_timestamp, ColumnMap, SplitSpec, TimeRange, Variable};
use crate::knn::BandwidthRule;
use crate::nn::NnTrainConfig;
use crate::preprocess::FeatureSpec;
use crate::qrf::QrfConfig;
use crate::svr::SvrConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected section.key=value")]
    BadOverride(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

pub const MODEL_NAMES: [&str; 4] = ["nn", "knn", "qrf", "svr"];
pub const ENSEMBLE_NAME: &str = "ens";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub weather: PathBuf,
    pub power: PathBuf,
    pub zone: u32,
    pub deaccumulate: bool,
    pub run_start_hour: u32,
    pub capacity: f64,
    /// Variable name to CSV column, for columns not named as in GEFCom2014.
    pub columns: BTreeMap<String, String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            weather: PathBuf::from("weather.csv"),
            power: PathBuf::from("power.csv"),
            zone: 1,
            deaccumulate: false,
            run_start_hour: 1,
            capacity: 1.0,
            columns: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_start: String,
    pub train_end: String,
    pub validation_start: String,
    pub validation_end: String,
    pub test_days: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let spec = SplitSpec::default_protocol();
        let ts = |t| crate::ingest::format_timestamp(&t);
        Self {
            train_start: ts(spec.train().start),
            train_end: ts(spec.train().end),
            validation_start: ts(spec.validation().start),
            validation_end: ts(spec.validation().end),
            test_days: spec
                .test_days()
                .iter()
                .map(|d| d.format("%Y-%m-%d").to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Inputs of kNN, QRF and SVR.
    pub weather: Vec<String>,
    /// Input of the network.
    pub nn: Vec<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            weather: FeatureSpec::weather_default().names(),
            nn: FeatureSpec::irradiance_only().names(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
    /// Fixed kernel width; absent means the median neighbour distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 300,
            sigma: None,
        }
    }
}

impl KnnConfig {
    pub fn bandwidth(&self) -> BandwidthRule {
        match self.sigma {
            Some(s) => BandwidthRule::Fixed(s),
            None => BandwidthRule::MedianNeighbourDistance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QrfSection {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
    pub quantile: f64,
    pub bootstrap: bool,
}

impl Default for QrfSection {
    fn default() -> Self {
        let d = QrfConfig::default();
        Self {
            n_trees: d.n_trees,
            min_samples_leaf: d.min_samples_leaf,
            mtry: d.mtry,
            quantile: d.quantile,
            bootstrap: d.bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnSection {
    pub max_epochs: usize,
    pub mu_init: f64,
    pub mu_inc: f64,
    pub mu_dec: f64,
    pub mu_max: f64,
    pub grad_tol: f64,
    pub alpha_init: f64,
    pub beta_init: f64,
    /// Re-train the network before each week of test days.
    pub refit_weekly: bool,
    /// Days of history used by a refit; absent means all history.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refit_window_days: Option<u32>,
}

impl Default for NnSection {
    fn default() -> Self {
        let d = NnTrainConfig::default();
        Self {
            max_epochs: d.max_epochs,
            mu_init: d.mu_init,
            mu_inc: d.mu_inc,
            mu_dec: d.mu_dec,
            mu_max: d.mu_max,
            grad_tol: d.grad_tol,
            alpha_init: d.alpha_init,
            beta_init: d.beta_init,
            refit_weekly: true,
            refit_window_days: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub members: Vec<String>,
    pub intercept: bool,
    pub clip: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: vec!["knn".into(), "qrf".into(), "svr".into()],
            intercept: false,
            clip: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Columns of the error table, in order.
    pub models: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            models: ["qrf", "knn", "svr", "ens"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub features: FeatureConfig,
    pub knn: KnnConfig,
    pub qrf: QrfSection,
    pub svr: SvrConfig,
    pub nn: NnSection,
    pub ensemble: EnsembleConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            features: FeatureConfig::default(),
            knn: KnnConfig::default(),
            qrf: QrfSection::default(),
            svr: SvrConfig::default(),
            nn: NnSection::default(),
            ensemble: EnsembleConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

fn parse_day(field: &str, s: &str) -> Result<NaiveDate, ConfigError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| invalid(field, format!("`{s}`: {e}")))
}

fn parse_time(field: &str, s: &str) -> Result<chrono::NaiveDateTime, ConfigError> {
    parse_timestamp(s).ok_or_else(|| invalid(field, format!("`{s}` is not a timestamp")))
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies `section.key=value` assignments to a parsed TOML table.
pub fn apply_overrides<S: AsRef<str>>(
    table: &mut toml::Table,
    overrides: &[S],
) -> Result<(), ConfigError> {
    for raw in overrides {
        let raw = raw.as_ref();
        let (path, value) = raw
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(raw.to_string()))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(ConfigError::BadOverride(raw.to_string()));
        }
        let (last, parents) = keys.split_last().expect("split yields one key");
        let mut node = &mut *table;
        for key in parents {
            let entry = node
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::BadOverride(raw.to_string()))?;
        }
        node.insert(last.to_string(), parse_value(value.trim()));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[] as &[&str])
    }

    pub fn from_toml_with_overrides<S: AsRef<str>>(
        text: &str,
        overrides: &[S],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Loads a file; relative data and output paths resolve against its directory.
    pub fn load<S: AsRef<str>>(path: &Path, overrides: &[S]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_with_overrides(&text, overrides)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.weather,
            &mut self.data.power,
            &mut self.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn split_spec(&self) -> Result<SplitSpec, ConfigError> {
        let s = &self.split;
        let train = TimeRange::new(
            parse_time("split.train_start", &s.train_start)?,
            parse_time("split.train_end", &s.train_end)?,
        );
        let validation = TimeRange::new(
            parse_time("split.validation_start", &s.validation_start)?,
            parse_time("split.validation_end", &s.validation_end)?,
        );
        let days = s
            .test_days
            .iter()
            .map(|d| parse_day("split.test_days", d))
            .collect::<Result<Vec<_>, _>>()?;
        SplitSpec::new(train, validation, days).map_err(|e| invalid("split", e))
    }

    pub fn column_map(&self) -> Result<ColumnMap, ConfigError> {
        let mut map = ColumnMap::default();
        for (name, column) in &self.data.columns {
            let v: Variable = name
                .parse()
                .map_err(|_| invalid("data.columns", format!("unknown variable `{name}`")))?;
            map.set(v, column.clone());
        }
        Ok(map)
    }

    pub fn weather_features(&self) -> Result<FeatureSpec, ConfigError> {
        FeatureSpec::from_names(&self.features.weather).map_err(|e| invalid("features.weather", e))
    }

    pub fn nn_features(&self) -> Result<FeatureSpec, ConfigError> {
        let spec =
            FeatureSpec::from_names(&self.features.nn).map_err(|e| invalid("features.nn", e))?;
        if spec.variables().len() != 1 {
            return Err(invalid(
                "features.nn",
                "the network takes exactly one input",
            ));
        }
        Ok(spec)
    }

    pub fn qrf_config(&self) -> QrfConfig {
        QrfConfig {
            n_trees: self.qrf.n_trees,
            min_samples_leaf: self.qrf.min_samples_leaf,
            mtry: self.qrf.mtry,
            quantile: self.qrf.quantile,
            bootstrap: self.qrf.bootstrap,
            seed: self.seed,
        }
    }

    pub fn nn_config(&self) -> NnTrainConfig {
        let n = &self.nn;
        NnTrainConfig {
            max_epochs: n.max_epochs,
            mu_init: n.mu_init,
            mu_inc: n.mu_inc,
            mu_dec: n.mu_dec,
            mu_max: n.mu_max,
            grad_tol: n.grad_tol,
            alpha_init: n.alpha_init,
            beta_init: n.beta_init,
            seed: self.seed,
        }
    }

    /// Checks every field against its legal range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.data.capacity.is_finite() && self.data.capacity > 0.0) {
            return Err(invalid("data.capacity", "must be positive"));
        }
        if self.data.run_start_hour > 23 {
            return Err(invalid("data.run_start_hour", "must be an hour of day"));
        }
        self.split_spec()?;
        self.column_map()?;
        self.weather_features()?;
        self.nn_features()?;
        if self.knn.k == 0 {
            return Err(invalid("knn.k", "must be at least 1"));
        }
        if let Some(s) = self.knn.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid("knn.sigma", "must be positive"));
            }
        }
        self.qrf_config()
            .validate()
            .map_err(|e| invalid("qrf", e))?;
        self.svr.validate().map_err(|e| invalid("svr", e))?;
        self.nn_config().validate().map_err(|e| invalid("nn", e))?;
        if self.nn.refit_window_days == Some(0) {
            return Err(invalid("nn.refit_window_days", "must be at least 1"));
        }
        let members = &self.ensemble.members;
        if members.is_empty() {
            return Err(invalid("ensemble.members", "empty"));
        }
        for (i, m) in members.iter().enumerate() {
            if !MODEL_NAMES.contains(&m.as_str()) {
                return Err(invalid("ensemble.members", format!("unknown model `{m}`")));
            }
            if members[..i].contains(m) {
                return Err(invalid("ensemble.members", format!("`{m}` listed twice")));
            }
        }
        for (i, m) in self.report.models.iter().enumerate() {
            if m != ENSEMBLE_NAME && !MODEL_NAMES.contains(&m.as_str()) {
                return Err(invalid("report.models", format!("unknown model `{m}`")));
            }
            if self.report.models[..i].contains(m) {
                return Err(invalid("report.models", format!("`{m}` listed twice")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_the_protocol() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.knn.k, 300);
        assert_eq!(c.qrf.n_trees, 300);
        assert_eq!(c.qrf.min_samples_leaf, 5);
        assert_eq!(c.qrf.quantile, 0.4);
        assert_eq!((c.svr.nu, c.svr.gamma, c.svr.c), (0.5, 1.25, 1.0));
        assert_eq!(c.split_spec().unwrap(), SplitSpec::default_protocol());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.knn.sigma = Some(0.25);
        c.qrf.mtry = Some(2);
        c.nn.refit_window_days = Some(14);
        c.data.columns.insert("SSRD".into(), "ssrd".into());
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&d.to_toml_string()).unwrap(), d);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides() {
        let c = RunConfig::from_toml_with_overrides(
            "[knn]\nk = 10\n",
            &[
                "knn.k=0",
                "svr.nu=0.25",
                "output_dir=results",
                "ensemble.members=[\"qrf\"]",
            ],
        )
        .unwrap();
        assert_eq!(c.knn.k, 0);
        assert_eq!(c.svr.nu, 0.25);
        assert_eq!(c.output_dir, PathBuf::from("results"));
        assert_eq!(c.ensemble.members, vec!["qrf".to_string()]);
        assert!(matches!(
            c.validate().unwrap_err(),
            ConfigError::Invalid { field, .. } if field == "knn.k"
        ));
    }

    #[test]
    fn bad_override_and_unknown_key() {
        assert!(matches!(
            RunConfig::from_toml_with_overrides("", &["knn.k"]),
            Err(ConfigError::BadOverride(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_with_overrides("", &["knn.kk=3"]),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("[svr]\nnu = \"half\"\n"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        c.features.nn = vec!["SSRD".into(), "TCC".into()];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.ensemble.members = vec!["knn".into(), "ens".into()];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.split.test_days = vec!["2013-03-01".into()];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.columns.insert("FOO".into(), "x".into());
        assert!(c.validate().is_err());
    }
}
