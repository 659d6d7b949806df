//! k-nearest-neighbour regression with Gaussian similarity weights.
//!
//! A query retrieves the `k` closest training rows by Euclidean distance
//! (ties broken by row index) and returns the kernel-weighted mean of their
//! targets, `w = exp(-d² / 2σ²)`.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::matrix::{squared_distance, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum KnnError {
    #[error("k = {k} exceeds the {n} training rows")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("training data must be normalized")]
    NotNormalized,
    #[error("training matrix contains non-finite values")]
    NonFinite,
    #[error("fixed bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
}

/// How the kernel width σ is chosen for a query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "sigma", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Median distance among the retrieved neighbours of each query.
    MedianNeighbourDistance,
    /// One global σ.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    x_train: Matrix,
    y_train: Vec<f64>,
    k: usize,
    bandwidth: BandwidthRule,
}

/// A neighbour retrieved for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    pub index: usize,
    pub distance: f64,
}

pub fn knn_fit(train: &Dataset, k: usize) -> Result<KnnModel, KnnError> {
    knn_fit_with(train, k, BandwidthRule::MedianNeighbourDistance)
}

pub fn knn_fit_with(
    train: &Dataset,
    k: usize,
    bandwidth: BandwidthRule,
) -> Result<KnnModel, KnnError> {
    if !train.is_normalized() {
        return Err(KnnError::NotNormalized);
    }
    KnnModel::new(
        train.features().clone(),
        train.target().to_vec(),
        k,
        bandwidth,
    )
}

impl KnnModel {
    /// Builds a model from raw arrays. The caller is responsible for scaling.
    pub fn new(
        x_train: Matrix,
        y_train: Vec<f64>,
        k: usize,
        bandwidth: BandwidthRule,
    ) -> Result<Self, KnnError> {
        assert_eq!(x_train.nrows(), y_train.len(), "row/target count mismatch");
        if k == 0 {
            return Err(KnnError::ZeroK);
        }
        if k > y_train.len() {
            return Err(KnnError::KTooLarge {
                k,
                n: y_train.len(),
            });
        }
        if !x_train.all_finite() || y_train.iter().any(|v| !v.is_finite()) {
            return Err(KnnError::NonFinite);
        }
        if let BandwidthRule::Fixed(s) = bandwidth {
            if !(s.is_finite() && s > 0.0) {
                return Err(KnnError::BadBandwidth(s));
            }
        }
        Ok(Self {
            x_train,
            y_train,
            k,
            bandwidth,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bandwidth(&self) -> BandwidthRule {
        self.bandwidth
    }

    pub fn n_features(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn with_bandwidth(mut self, bandwidth: BandwidthRule) -> Self {
        self.bandwidth = bandwidth;
        self
    }

    /// The `k` nearest rows, closest first; equal distances ordered by row index.
    pub fn neighbours(&self, x: &[f64]) -> Vec<Neighbour> {
        assert_eq!(x.len(), self.x_train.ncols(), "query dimension mismatch");
        let mut all: Vec<(f64, usize)> = self
            .x_train
            .rows_iter()
            .enumerate()
            .map(|(i, r)| (squared_distance(r, x), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if self.k < all.len() {
            all.select_nth_unstable_by(self.k - 1, cmp);
            all.truncate(self.k);
        }
        all.sort_by(cmp);
        all.into_iter()
            .map(|(d2, index)| Neighbour {
                index,
                distance: d2.sqrt(),
            })
            .collect()
    }

    fn sigma(&self, nb: &[Neighbour]) -> f64 {
        match self.bandwidth {
            BandwidthRule::Fixed(s) => s,
            BandwidthRule::MedianNeighbourDistance => {
                let m = nb.len();
                // nb is sorted by distance
                if m % 2 == 1 {
                    nb[m / 2].distance
                } else {
                    0.5 * (nb[m / 2 - 1].distance + nb[m / 2].distance)
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let nb = self.neighbours(x);
        let sigma = self.sigma(&nb);
        if sigma == 0.0 {
            let zero: Vec<f64> = nb
                .iter()
                .filter(|n| n.distance == 0.0)
                .map(|n| self.y_train[n.index])
                .collect();
            return zero.iter().sum::<f64>() / zero.len() as f64;
        }
        let denom = 2.0 * sigma * sigma;
        let (num, den) = nb.iter().fold((0.0, 0.0), |(num, den), n| {
            let w = (-n.distance * n.distance / denom).exp();
            (num + w * self.y_train[n.index], den + w)
        });
        if den > 0.0 {
            num / den
        } else {
            // every weight underflowed; the closest neighbour dominates
            self.y_train[nb[0].index]
        }
    }

    pub fn predict_batch(&self, x: &Matrix) -> Vec<f64> {
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict(x.row(i)))
            .collect()
    }
}

pub fn knn_predict(model: &KnnModel, x: &[f64]) -> f64 {
    model.predict(x)
}
