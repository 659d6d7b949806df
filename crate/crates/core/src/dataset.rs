use chrono::NaiveDateTime;
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("shape mismatch: {rows} feature rows, {targets} targets, {timestamps} timestamps")]
    ShapeMismatch {
        rows: usize,
        targets: usize,
        timestamps: usize,
    },
    #[error("{names} feature names for {cols} columns")]
    NameMismatch { names: usize, cols: usize },
}

/// Aligned features, target power and timestamps.
///
/// Rows are hourly and chronological. The `normalized` flag guards against
/// scaling the same data twice.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    target: Vec<f64>,
    timestamps: Vec<NaiveDateTime>,
    feature_names: Vec<String>,
    normalized: bool,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        target: Vec<f64>,
        timestamps: Vec<NaiveDateTime>,
        feature_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if features.nrows() != target.len() || target.len() != timestamps.len() {
            return Err(DatasetError::ShapeMismatch {
                rows: features.nrows(),
                targets: target.len(),
                timestamps: timestamps.len(),
            });
        }
        // A 0-row matrix built from no rows reports 0 columns; accept any names then.
        if features.nrows() > 0 && features.ncols() != feature_names.len() {
            return Err(DatasetError::NameMismatch {
                names: feature_names.len(),
                cols: features.ncols(),
            });
        }
        let features = if features.nrows() == 0 {
            Matrix::zeros(0, feature_names.len())
        } else {
            features
        };
        Ok(Self {
            features,
            target,
            timestamps,
            feature_names,
            normalized: false,
        })
    }

    pub(crate) fn with_normalized(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Rows at the given indices, keeping all columns and the normalized flag.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            feature_names: self.feature_names.clone(),
            normalized: self.normalized,
        }
    }

    pub(crate) fn with_features(&self, features: Matrix, names: Vec<String>) -> Dataset {
        debug_assert_eq!(features.nrows(), self.len());
        Dataset {
            features,
            target: self.target.clone(),
            timestamps: self.timestamps.clone(),
            feature_names: names,
            normalized: self.normalized,
        }
    }

    /// Concatenates two datasets with identical columns. Rows are re-sorted by timestamp.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, DatasetError> {
        if self.feature_names != other.feature_names {
            return Err(DatasetError::NameMismatch {
                names: other.feature_names.len(),
                cols: self.feature_names.len(),
            });
        }
        let mut order: Vec<(NaiveDateTime, bool, usize)> = self
            .timestamps
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, false, i))
            .chain(
                other
                    .timestamps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (*t, true, i)),
            )
            .collect();
        order.sort();
        let p = self.n_features();
        let mut data = Vec::with_capacity(order.len() * p);
        let mut target = Vec::with_capacity(order.len());
        let mut timestamps = Vec::with_capacity(order.len());
        for (t, from_other, i) in order {
            let src = if from_other { other } else { self };
            data.extend_from_slice(src.features.row(i));
            target.push(src.target[i]);
            timestamps.push(t);
        }
        Ok(Dataset {
            features: Matrix::from_vec(target.len(), p, data),
            target,
            timestamps,
            feature_names: self.feature_names.clone(),
            normalized: self.normalized && other.normalized,
        })
    }
}
