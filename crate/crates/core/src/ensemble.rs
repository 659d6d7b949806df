//! Linear stacking of member forecasts with least-squares weights.
//!
//! Weights are the minimum-norm least-squares solution `w = pinv(P) y`,
//! computed from a singular value decomposition. The combined forecast is
//! `Pw` (plus an optional intercept), clipped to `[0, 1]` by default.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("need at least as many rows ({rows}) as weights ({weights})")]
    TooFewRows { rows: usize, weights: usize },
    #[error("expected {expected} member predictions, got {got}")]
    MemberMismatch { expected: usize, got: usize },
    #[error("prediction matrix or targets contain non-finite values")]
    NonFinite,
    #[error("no ensemble members")]
    NoMembers,
    #[error("singular value decomposition failed: {0}")]
    Decomposition(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rank: usize,
    /// Sum of squared residuals on the fitting rows, before clipping.
    pub residual: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    member_names: Vec<String>,
    /// Member weights, followed by the intercept when enabled.
    w: Vec<f64>,
    intercept: bool,
    clip: bool,
    diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    pub intercept: bool,
    pub clip: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            intercept: false,
            clip: true,
        }
    }
}

impl EnsembleWeights {
    pub fn member_names(&self) -> &[String] {
        &self.member_names
    }

    /// Weights in member order, with the intercept last when enabled.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn member_weights(&self) -> &[f64] {
        &self.w[..self.member_names.len()]
    }

    pub fn intercept(&self) -> Option<f64> {
        self.intercept.then(|| self.w[self.member_names.len()])
    }

    pub fn clips(&self) -> bool {
        self.clip
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    /// Combination before clipping.
    pub fn combine_raw(&self, preds: &[f64]) -> Result<f64, EnsembleError> {
        let k = self.member_names.len();
        if preds.len() != k {
            return Err(EnsembleError::MemberMismatch {
                expected: k,
                got: preds.len(),
            });
        }
        let dot: f64 = preds.iter().zip(&self.w).map(|(p, w)| p * w).sum();
        Ok(dot + self.intercept().unwrap_or(0.0))
    }

    pub fn predict(&self, preds: &[f64]) -> Result<f64, EnsembleError> {
        let v = self.combine_raw(preds)?;
        Ok(if self.clip { v.clamp(0.0, 1.0) } else { v })
    }

    /// Combines each row of an `m × k` prediction matrix.
    pub fn predict_batch(&self, preds: &Matrix) -> Result<Vec<f64>, EnsembleError> {
        preds.rows_iter().map(|r| self.predict(r)).collect()
    }
}

/// Builds weights directly, e.g. from a stored artifact.
pub fn from_parts(
    member_names: Vec<String>,
    w: Vec<f64>,
    options: FitOptions,
) -> Result<EnsembleWeights, EnsembleError> {
    let expected = member_names.len() + usize::from(options.intercept);
    if member_names.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    if w.len() != expected {
        return Err(EnsembleError::MemberMismatch {
            expected,
            got: w.len(),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(EnsembleError::NonFinite);
    }
    Ok(EnsembleWeights {
        member_names,
        w,
        intercept: options.intercept,
        clip: options.clip,
        diagnostics: FitDiagnostics {
            rank: 0,
            residual: f64::NAN,
            rows: 0,
        },
    })
}

/// Least-squares weights for the columns of `p` (one column per member).
pub fn fit_weights(
    p: &Matrix,
    y: &[f64],
    member_names: &[String],
    options: FitOptions,
) -> Result<EnsembleWeights, EnsembleError> {
    let (m, k) = (p.nrows(), p.ncols());
    assert_eq!(m, y.len(), "row/target count mismatch");
    if k == 0 {
        return Err(EnsembleError::NoMembers);
    }
    if member_names.len() != k {
        return Err(EnsembleError::MemberMismatch {
            expected: member_names.len(),
            got: k,
        });
    }
    let cols = k + usize::from(options.intercept);
    if m < cols {
        return Err(EnsembleError::TooFewRows {
            rows: m,
            weights: cols,
        });
    }
    if !p.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(EnsembleError::NonFinite);
    }

    let design = DMatrix::from_fn(m, cols, |i, j| if j < k { p.get(i, j) } else { 1.0 });
    let target = DVector::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    let largest = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = largest * m.max(cols) as f64 * f64::EPSILON;
    let rank = svd.rank(cutoff);
    let w = svd
        .solve(&target, cutoff)
        .map_err(|e| EnsembleError::Decomposition(e.to_string()))?;
    let residual = (&design * &w - &target).norm_squared();
    Ok(EnsembleWeights {
        member_names: member_names.to_vec(),
        w: w.iter().copied().collect(),
        intercept: options.intercept,
        clip: options.clip,
        diagnostics: FitDiagnostics {
            rank,
            residual,
            rows: m,
        },
    })
}

pub fn ensemble_predict(
    weights: &EnsembleWeights,
    member_preds: &[f64],
) -> Result<f64, EnsembleError> {
    weights.predict(member_preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        ["knn", "qrf", "svr"][..k]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn exact_single_member() {
        let y = vec![0.1, 0.5, 0.3, 0.9];
        let p = Matrix::from_vec(4, 1, y.clone());
        let w = fit_weights(&p, &y, &names(1), FitOptions::default()).unwrap();
        assert!((w.weights()[0] - 1.0).abs() < 1e-12);
        assert!(w.diagnostics().residual < 1e-24);
    }

    #[test]
    fn consistent_system() {
        let p = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let w = fit_weights(&p, &[1.0, 1.0, 2.0], &names(2), FitOptions::default()).unwrap();
        assert!((w.weights()[0] - 1.0).abs() < 1e-12);
        assert!((w.weights()[1] - 1.0).abs() < 1e-12);
        assert!(w.diagnostics().residual < 1e-24);
        assert_eq!(w.diagnostics().rank, 2);
    }

    #[test]
    fn orthogonal_noise_gets_zero_weight() {
        // y and noise are orthogonal by construction
        let y = [1.0, 2.0, 0.0, 1.0, 3.0, 0.5, 1.5, 2.5, 0.2, 1.1];
        let mut noise = [1.0, -1.0, 2.0, 0.5, -0.3, 1.2, -0.7, 0.4, 0.9, -1.1];
        let proj = noise.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
            / y.iter().map(|v| v * v).sum::<f64>();
        for (n, v) in noise.iter_mut().zip(&y) {
            *n -= proj * v;
        }
        let rows: Vec<[f64; 2]> = noise.iter().zip(&y).map(|(n, v)| [*n, *v]).collect();
        let w = fit_weights(
            &Matrix::from_rows(&rows),
            &y,
            &names(2),
            FitOptions::default(),
        )
        .unwrap();
        assert!(w.weights()[0].abs() < 1e-8);
        assert!((w.weights()[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // duplicate columns: minimum-norm solution splits the weight evenly
        let p = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let w = fit_weights(&p, &[1.0, 2.0, 3.0], &names(2), FitOptions::default()).unwrap();
        assert_eq!(w.diagnostics().rank, 1);
        assert!((w.weights()[0] - 0.5).abs() < 1e-12);
        assert!((w.weights()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn intercept_column() {
        let p = Matrix::from_rows(&[[0.0], [1.0], [2.0]]);
        let opts = FitOptions {
            intercept: true,
            clip: false,
        };
        let w = fit_weights(&p, &[0.5, 1.5, 2.5], &names(1), opts).unwrap();
        assert!((w.member_weights()[0] - 1.0).abs() < 1e-12);
        assert!((w.intercept().unwrap() - 0.5).abs() < 1e-12);
        assert!((w.predict(&[3.0]).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn prediction_rules() {
        let opts = FitOptions::default();
        let sel = from_parts(names(3), vec![1.0, 0.0, 0.0], opts).unwrap();
        assert_eq!(sel.predict(&[0.4, 0.9, 0.1]).unwrap(), 0.4);
        let half = from_parts(names(3), vec![0.5, 0.5, 0.0], opts).unwrap();
        assert!((half.predict(&[0.2, 0.6, 0.7]).unwrap() - 0.4).abs() < 1e-15);
        let big = from_parts(names(3), vec![2.0, 0.0, 0.0], opts).unwrap();
        assert_eq!(big.predict(&[0.8, 0.1, 0.1]).unwrap(), 1.0);
        assert_eq!(
            big.predict(&[0.8, 0.1]).unwrap_err(),
            EnsembleError::MemberMismatch {
                expected: 3,
                got: 2
            }
        );
    }

    #[test]
    fn too_few_rows() {
        let p = Matrix::from_rows(&[[1.0, 0.0, 0.3]]);
        let err = fit_weights(&p, &[1.0], &names(3), FitOptions::default()).unwrap_err();
        assert_eq!(
            err,
            EnsembleError::TooFewRows {
                rows: 1,
                weights: 3
            }
        );
    }
}
