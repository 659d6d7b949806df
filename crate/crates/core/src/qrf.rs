//! Quantile regression forest.
//!
//! Bagged CART regression trees grown with a squared-error criterion. Leaves
//! keep the (bootstrap) training rows that reached them, so a query can be
//! answered with any conditional quantile of the weighted empirical
//! distribution of training targets: each tree spreads weight `1 / (T |leaf|)`
//! over the rows sharing the query's leaf.

use std::cmp::Ordering;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::matrix::Matrix;

/// Relative margin a candidate split must beat the incumbent by.
const SPLIT_TIE_EPS: f64 = 1e-12;
/// Relative slack on the cumulative-weight comparison in [`weighted_quantile`].
const QUANTILE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum QrfError {
    #[error("need at least {needed} rows (2 x min_samples_leaf), got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("quantile {0} outside (0, 1)")]
    BadQuantile(f64),
    #[error("invalid forest configuration: {0}")]
    BadConfig(String),
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("all quantile weights are zero")]
    AllZeroWeights,
    #[error("{values} values but {weights} weights")]
    LengthMismatch { values: usize, weights: usize },
    #[error("negative or non-finite weight {0}")]
    BadWeight(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrfConfig {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `max(1, p / 3)`.
    pub mtry: Option<usize>,
    pub quantile: f64,
    /// Draw a bootstrap sample per tree; `false` grows every tree on all rows once.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for QrfConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            min_samples_leaf: 5,
            mtry: None,
            quantile: 0.4,
            bootstrap: true,
            seed: 42,
        }
    }
}

impl QrfConfig {
    pub fn validate(&self) -> Result<(), QrfError> {
        if self.n_trees == 0 {
            return Err(QrfError::BadConfig("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(QrfError::BadConfig("min_samples_leaf must be >= 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(QrfError::BadConfig("mtry must be >= 1".into()));
        }
        check_quantile(self.quantile)
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or((p / 3).max(1)).min(p).max(1)
    }
}

fn check_quantile(q: f64) -> Result<(), QrfError> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(QrfError::BadQuantile(q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Training rows in this leaf, repeated per bootstrap draw.
    Leaf { rows: Vec<u32> },
}

/// One regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_rows(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf { rows } => return rows,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// How often each training row was drawn for this tree.
    pub fn in_bag_counts(&self, n: usize) -> Vec<u32> {
        let mut counts = vec![0; n];
        for node in &self.nodes {
            if let Node::Leaf { rows } = node {
                for &r in rows {
                    counts[r as usize] += 1;
                }
            }
        }
        counts
    }

    /// Mean target of the leaf reached by `x`.
    pub fn leaf_mean(&self, x: &[f64], y: &[f64]) -> f64 {
        let rows = self.leaf_rows(x);
        rows.iter().map(|&r| y[r as usize]).sum::<f64>() / rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrfModel {
    trees: Vec<Tree>,
    y_train: Vec<f64>,
    n_features: usize,
    config: QrfConfig,
}

/// Best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Sum of squared errors of the two children.
    pub child_sse: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = (a + b) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Best squared-error split of `rows` over the listed features, or `None` if
/// no split leaves `min_leaf` rows on each side and lowers the error.
///
/// Features are scanned in the order given and thresholds in ascending order;
/// the first candidate keeps the slot unless a later one is strictly better.
pub fn best_split(
    x: &Matrix,
    y: &[f64],
    rows: &[u32],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let m = rows.len();
    if m < 2 * min_leaf {
        return None;
    }
    let mean = rows.iter().map(|&r| y[r as usize]).sum::<f64>() / m as f64;
    let sse: f64 = rows.iter().map(|&r| (y[r as usize] - mean).powi(2)).sum();
    if sse <= 0.0 {
        return None;
    }

    // Centred targets: child SSE = sse - (s_l²/n_l + s_r²/n_r - s²/m).
    let mut order: Vec<(f64, f64)> = Vec::with_capacity(m);
    let s_total: f64 = rows.iter().map(|&r| y[r as usize] - mean).sum();
    let base = s_total * s_total / m as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    for &f in features {
        order.clear();
        order.extend(
            rows.iter()
                .map(|&r| (x.get(r as usize, f), y[r as usize] - mean)),
        );
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        let mut s_left = 0.0;
        for i in 0..m - 1 {
            s_left += order[i].1;
            let n_left = i + 1;
            let n_right = m - n_left;
            if n_left < min_leaf {
                continue;
            }
            if n_right < min_leaf {
                break;
            }
            if order[i].0 == order[i + 1].0 {
                continue;
            }
            let s_right = s_total - s_left;
            let gain = s_left * s_left / n_left as f64 + s_right * s_right / n_right as f64 - base;
            let better = match best {
                None => true,
                Some((g, _, _)) => gain > g + SPLIT_TIE_EPS * g.abs().max(sse),
            };
            if better {
                best = Some((gain, f, midpoint(order[i].0, order[i + 1].0)));
            }
        }
    }
    let (gain, feature, threshold) = best?;
    if gain <= SPLIT_TIE_EPS * sse {
        return None;
    }
    Some(SplitChoice {
        feature,
        threshold,
        child_sse: (sse - gain).max(0.0),
    })
}

fn grow_tree(
    x: &Matrix,
    y: &[f64],
    sample: Vec<u32>,
    config: &QrfConfig,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let p = x.ncols();
    let mut nodes = vec![Node::Leaf { rows: Vec::new() }];
    let mut stack = vec![(0usize, sample)];
    while let Some((slot, rows)) = stack.pop() {
        let mut features: Vec<usize> = if mtry >= p {
            (0..p).collect()
        } else {
            rand::seq::index::sample(rng, p, mtry).into_vec()
        };
        features.sort_unstable();
        match best_split(x, y, &rows, &features, config.min_samples_leaf) {
            None => nodes[slot] = Node::Leaf { rows },
            Some(s) => {
                let (l, r): (Vec<u32>, Vec<u32>) = rows
                    .into_iter()
                    .partition(|&i| x.get(i as usize, s.feature) <= s.threshold);
                let left = nodes.len();
                let right = left + 1;
                nodes.push(Node::Leaf { rows: Vec::new() });
                nodes.push(Node::Leaf { rows: Vec::new() });
                nodes[slot] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
                stack.push((right, r));
                stack.push((left, l));
            }
        }
    }
    Tree { nodes }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

pub fn qrf_fit(train: &Dataset, config: &QrfConfig) -> Result<QrfModel, QrfError> {
    QrfModel::fit(train.features(), train.target(), config)
}

impl QrfModel {
    pub fn fit(x: &Matrix, y: &[f64], config: &QrfConfig) -> Result<Self, QrfError> {
        config.validate()?;
        assert_eq!(x.nrows(), y.len(), "row/target count mismatch");
        let n = y.len();
        let needed = 2 * config.min_samples_leaf;
        if n < needed {
            return Err(QrfError::TooFewSamples { needed, got: n });
        }
        if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(QrfError::NonFinite);
        }
        let mtry = config.resolved_mtry(x.ncols());
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(config.seed, t);
                let sample: Vec<u32> = if config.bootstrap {
                    let mut s: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
                    s.sort_unstable();
                    s
                } else {
                    (0..n as u32).collect()
                };
                grow_tree(x, y, sample, config, mtry, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            y_train: y.to_vec(),
            n_features: x.ncols(),
            config: config.clone(),
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &QrfConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn y_train(&self) -> &[f64] {
        &self.y_train
    }

    /// Target values and weights of the training rows sharing `x`'s leaves.
    pub fn leaf_distribution(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.distribution_over(x, self.trees.iter())
    }

    fn distribution_over<'a>(
        &self,
        x: &[f64],
        trees: impl Iterator<Item = &'a Tree>,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut values = Vec::new();
        let mut weights = Vec::new();
        let mut n_trees = 0usize;
        for tree in trees {
            let rows = tree.leaf_rows(x);
            let w = 1.0 / rows.len() as f64;
            for &r in rows {
                values.push(self.y_train[r as usize]);
                weights.push(w);
            }
            n_trees += 1;
        }
        let scale = 1.0 / n_trees.max(1) as f64;
        weights.iter_mut().for_each(|w| *w *= scale);
        (values, weights)
    }

    /// The `q`-quantile of the forest's conditional distribution at `x`.
    pub fn predict_quantile(&self, x: &[f64], q: f64) -> Result<f64, QrfError> {
        check_quantile(q)?;
        assert_eq!(x.len(), self.n_features, "query dimension mismatch");
        let (values, weights) = self.leaf_distribution(x);
        weighted_quantile(&values, &weights, q)
    }

    /// Prediction at the configured quantile.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_quantile(x, self.config.quantile)
            .expect("validated quantile and non-empty leaves")
    }

    pub fn predict_batch(&self, x: &Matrix) -> Vec<f64> {
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict(x.row(i)))
            .collect()
    }

    /// Quantile at training row `i` using only trees that did not draw it.
    /// `None` when every tree saw the row.
    pub fn predict_oob(&self, x: &Matrix, i: usize, q: f64) -> Option<f64> {
        let row = x.row(i);
        let oob: Vec<&Tree> = self.trees.iter().filter(|t| !contains_row(t, i)).collect();
        if oob.is_empty() {
            return None;
        }
        let (values, weights) = self.distribution_over(row, oob.into_iter());
        weighted_quantile(&values, &weights, q).ok()
    }
}

// Leaf row lists are sorted: the bootstrap sample is sorted and splitting is stable.
fn contains_row(tree: &Tree, i: usize) -> bool {
    tree.nodes.iter().any(|n| match n {
        Node::Leaf { rows } => rows.binary_search(&(i as u32)).is_ok(),
        Node::Split { .. } => false,
    })
}

pub fn qrf_predict(model: &QrfModel, x: &[f64], q: f64) -> Result<f64, QrfError> {
    model.predict_quantile(x, q)
}

/// Smallest value whose cumulative weight reaches `q` of the total.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64, QrfError> {
    if values.len() != weights.len() {
        return Err(QrfError::LengthMismatch {
            values: values.len(),
            weights: weights.len(),
        });
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(QrfError::BadWeight(w));
    }
    check_quantile(q)?;
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(QrfError::AllZeroWeights);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let target = q * total * (1.0 - QUANTILE_EPS);
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if weights[i] > 0.0 && cum >= target {
            return Ok(values[i]);
        }
    }
    // rounding left cum just short of target
    Ok(order
        .iter()
        .rev()
        .find(|&&i| weights[i] > 0.0)
        .map(|&i| values[i])
        .expect("positive total implies a positive weight"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_feature(x: &[f64]) -> Matrix {
        Matrix::from_rows(&x.iter().map(|v| vec![*v]).collect::<Vec<_>>())
    }

    #[test]
    fn quantile_by_cdf_walk() {
        assert_eq!(
            weighted_quantile(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 0.4),
            Ok(2.0)
        );
        assert_eq!(
            weighted_quantile(&[3.0, 1.0, 2.0], &[1.0, 1.0, 1.0], 0.3),
            Ok(1.0)
        );
        assert_eq!(weighted_quantile(&[7.0], &[0.2], 0.99), Ok(7.0));
        let v = [0.1, 0.2, 0.3, 0.4, 0.5];
        let w = [1.0; 5];
        assert_eq!(weighted_quantile(&v, &w, 0.5), Ok(0.3));
        assert_eq!(weighted_quantile(&v, &w, 1e-9), Ok(0.1));
        assert_eq!(weighted_quantile(&v, &w, 1.0 - 1e-9), Ok(0.5));
    }

    #[test]
    fn quantile_errors() {
        assert_eq!(
            weighted_quantile(&[1.0, 2.0], &[0.0, 0.0], 0.5),
            Err(QrfError::AllZeroWeights)
        );
        assert_eq!(
            weighted_quantile(&[1.0], &[-1.0], 0.5),
            Err(QrfError::BadWeight(-1.0))
        );
        assert_eq!(
            weighted_quantile(&[1.0], &[1.0], 1.0),
            Err(QrfError::BadQuantile(1.0))
        );
    }

    #[test]
    fn zero_weight_values_are_skipped() {
        assert_eq!(
            weighted_quantile(&[0.0, 5.0, 9.0], &[0.0, 1.0, 1.0], 0.01),
            Ok(5.0)
        );
    }

    #[test]
    fn constant_target_gives_single_leaves() {
        let x = one_feature(&(0..40).map(|i| i as f64).collect::<Vec<_>>());
        let y = vec![0.3; 40];
        let cfg = QrfConfig {
            n_trees: 10,
            ..QrfConfig::default()
        };
        let m = QrfModel::fit(&x, &y, &cfg).unwrap();
        assert!(m.trees().iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.predict(&[17.5]), 0.3);
        assert_eq!(m.predict(&[-100.0]), 0.3);
    }

    #[test]
    fn pure_tree_reproduces_training_targets() {
        let xs = [0.3, 0.1, 0.9, 0.5, 0.7, 0.2];
        let y = [0.5, 0.1, 0.8, 0.2, 0.9, 0.4];
        let cfg = QrfConfig {
            n_trees: 1,
            min_samples_leaf: 1,
            bootstrap: false,
            mtry: Some(1),
            ..QrfConfig::default()
        };
        let m = QrfModel::fit(&one_feature(&xs), &y, &cfg).unwrap();
        for (x, t) in xs.iter().zip(y) {
            assert_eq!(m.predict_quantile(&[*x], 0.5).unwrap(), t);
        }
        assert_eq!(m.trees()[0].n_leaves(), 6);
    }

    #[test]
    fn too_few_samples() {
        let x = one_feature(&[1.0; 9]);
        let err = QrfModel::fit(&x, &[0.0; 9], &QrfConfig::default()).unwrap_err();
        assert_eq!(err, QrfError::TooFewSamples { needed: 10, got: 9 });
    }

    #[test]
    fn ten_row_split_matches_exhaustive_midpoint_search() {
        let xs = [0.05, 0.93, 0.41, 0.77, 0.12, 0.58, 0.36, 0.84, 0.69, 0.22];
        let y = [0.1, 0.8, 0.35, 0.7, 0.15, 0.4, 0.3, 0.9, 0.65, 0.2];
        // exhaustive: every midpoint, weighted child MSE computed two-pass
        let mut sorted = xs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best = (f64::INFINITY, 0.0);
        for w in sorted.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = (0..10).partition(|&i| xs[i] <= t);
            if l.len() < 5 || r.len() < 5 {
                continue;
            }
            let sse = |ix: &[usize]| {
                let m = ix.iter().map(|&i| y[i]).sum::<f64>() / ix.len() as f64;
                ix.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>()
            };
            let total = sse(&l) + sse(&r);
            if total < best.0 {
                best = (total, t);
            }
        }
        let rows: Vec<u32> = (0..10).collect();
        let s = best_split(&one_feature(&xs), &y, &rows, &[0], 5).unwrap();
        assert_eq!(s.threshold, best.1);
        assert!((s.child_sse - best.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let x = Matrix::from_rows(
            &(0..60)
                .map(|i| {
                    vec![
                        (i as f64 * 0.7).sin(),
                        (i as f64 * 0.3).cos(),
                        i as f64 / 60.0,
                    ]
                })
                .collect::<Vec<_>>(),
        );
        let y: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let cfg = QrfConfig {
            n_trees: 20,
            ..QrfConfig::default()
        };
        let a = QrfModel::fit(&x, &y, &cfg).unwrap();
        let b = QrfModel::fit(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let c = QrfModel::fit(&x, &y, &QrfConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn leaves_respect_min_samples() {
        let x = one_feature(&(0..97).map(|i| ((i * 37) % 97) as f64).collect::<Vec<_>>());
        let y: Vec<f64> = (0..97).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
        let m = QrfModel::fit(
            &x,
            &y,
            &QrfConfig {
                n_trees: 8,
                ..QrfConfig::default()
            },
        )
        .unwrap();
        for t in m.trees() {
            for n in &t.nodes {
                if let Node::Leaf { rows } = n {
                    assert!(rows.len() >= 5);
                }
            }
            assert_eq!(t.in_bag_counts(97).iter().sum::<u32>(), 97);
        }
    }
}
