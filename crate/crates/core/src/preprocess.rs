//! Feature selection and min-max scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::ingest::{Variable, WeatherRecord};
use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature list is empty")]
    NoFeatures,
    #[error("feature `{0}` listed twice")]
    DuplicateFeature(String),
    #[error("need at least 2 rows to fit a normalizer, got {0}")]
    EmptyDataset(usize),
    #[error("feature mismatch: normalizer has {expected:?}, data has {found:?}")]
    FeatureMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("dataset is already normalized")]
    AlreadyNormalized,
    #[error("dataset is not normalized")]
    NotNormalized,
}

/// Ordered list of model input variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    selected: Vec<Variable>,
}

impl FeatureSpec {
    pub fn new(selected: Vec<Variable>) -> Result<Self, PreprocessError> {
        if selected.is_empty() {
            return Err(PreprocessError::NoFeatures);
        }
        for (i, v) in selected.iter().enumerate() {
            if selected[..i].contains(v) {
                return Err(PreprocessError::DuplicateFeature(v.name().to_string()));
            }
        }
        Ok(Self { selected })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, PreprocessError> {
        let vars = names
            .iter()
            .map(|n| {
                n.as_ref()
                    .parse::<Variable>()
                    .map_err(|_| PreprocessError::UnknownFeature(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(vars)
    }

    /// Cloud cover, solar down, thermal down, top net solar, precipitation.
    pub fn weather_default() -> Self {
        Self {
            selected: vec![
                Variable::Tcc,
                Variable::Ssrd,
                Variable::Strd,
                Variable::Tsr,
                Variable::Tp,
            ],
        }
    }

    /// Irradiance only; input of the neural network.
    pub fn irradiance_only() -> Self {
        Self {
            selected: vec![Variable::Ssrd],
        }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.selected
    }

    pub fn names(&self) -> Vec<String> {
        self.selected.iter().map(|v| v.name().to_string()).collect()
    }

    /// Column subset of a dataset whose feature names include every selected variable.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset, PreprocessError> {
        let idx = self
            .selected
            .iter()
            .map(|v| {
                data.feature_names()
                    .iter()
                    .position(|n| n == v.name())
                    .ok_or_else(|| PreprocessError::UnknownFeature(v.name().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(data.with_features(data.features().select_columns(&idx), self.names()))
    }
}

/// Pulls the selected variables out of raw records, one row per record.
pub fn select_features(records: &[WeatherRecord], spec: &FeatureSpec) -> Matrix {
    let p = spec.selected.len();
    let mut data = Vec::with_capacity(records.len() * p);
    for r in records {
        data.extend(spec.selected.iter().map(|v| r.get(*v)));
    }
    Matrix::from_vec(records.len(), p, data)
}

/// Like [`select_features`] but takes variable names, as read from a config file.
pub fn select_features_by_name<S: AsRef<str>>(
    records: &[WeatherRecord],
    names: &[S],
) -> Result<Matrix, PreprocessError> {
    Ok(select_features(records, &FeatureSpec::from_names(names)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub degenerate: bool,
}

/// Per-feature min/max learned from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: Vec<FeatureRange>,
}

impl Normalizer {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    fn check(&self, data: &Dataset) -> Result<(), PreprocessError> {
        let expected = self.names();
        if data.feature_names() != expected.as_slice() {
            return Err(PreprocessError::FeatureMismatch {
                expected,
                found: data.feature_names().to_vec(),
            });
        }
        Ok(())
    }

    pub fn scale_value(&self, j: usize, x: f64) -> f64 {
        let f = &self.features[j];
        if f.degenerate {
            0.0
        } else {
            (x - f.min) / (f.max - f.min)
        }
    }

    pub fn unscale_value(&self, j: usize, x: f64) -> f64 {
        let f = &self.features[j];
        if f.degenerate {
            f.min
        } else {
            x * (f.max - f.min) + f.min
        }
    }

    /// Scales one feature row in place. Values are not clipped.
    pub fn scale_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = self.scale_value(j, *v);
        }
    }

    /// `(x - min) / (max - min)` per column; degenerate columns map to 0.
    pub fn transform(&self, data: &Dataset) -> Result<Dataset, PreprocessError> {
        if data.is_normalized() {
            return Err(PreprocessError::AlreadyNormalized);
        }
        self.check(data)?;
        let mut x = data.features().clone();
        for i in 0..x.nrows() {
            self.scale_row(x.row_mut(i));
        }
        Ok(data
            .with_features(x, data.feature_names().to_vec())
            .with_normalized(true))
    }

    pub fn denormalize(&self, data: &Dataset) -> Result<Dataset, PreprocessError> {
        if !data.is_normalized() {
            return Err(PreprocessError::NotNormalized);
        }
        self.check(data)?;
        let mut x = data.features().clone();
        for i in 0..x.nrows() {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = self.unscale_value(j, *v);
            }
        }
        Ok(data
            .with_features(x, data.feature_names().to_vec())
            .with_normalized(false))
    }
}

pub fn fit_normalizer(train: &Dataset) -> Result<Normalizer, PreprocessError> {
    if train.len() < 2 {
        return Err(PreprocessError::EmptyDataset(train.len()));
    }
    if train.is_normalized() {
        return Err(PreprocessError::AlreadyNormalized);
    }
    let x = train.features();
    let features = train
        .feature_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (min, max) = x
                .rows_iter()
                .map(|r| r[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            FeatureRange {
                name: name.clone(),
                min,
                max,
                degenerate: max == min,
            }
        })
        .collect();
    Ok(Normalizer { features })
}
