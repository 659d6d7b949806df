//! ν-support-vector regression with a Gaussian kernel.
//!
//! The dual is solved with box `0 <= alpha, alpha* <= c/n` and budget
//! `sum (alpha + alpha*) <= c nu`, i.e. `c` is the total regularisation
//! budget and the per-sample bound shrinks with the training set. The tube
//! width ε is a by-product of the optimisation.

mod kernel;
mod smo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::matrix::Matrix;

pub use kernel::{Rbf, FULL_CACHE_MAX_ROWS};

/// Box convention tag recorded in every model.
pub const BOX_CONVENTION: &str = "box=c/n;budget=c*nu";

#[derive(Debug, Error, PartialEq)]
pub enum SvrError {
    #[error("invalid SVR configuration: {0}")]
    BadConfig(String),
    #[error("need at least 2 training rows, got {0}")]
    TooFewSamples(usize),
    #[error("all training rows are identical")]
    DegenerateKernel,
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("training data must be normalized")]
    NotNormalized,
    #[error("no convergence after {iterations} iterations (KKT gap {gap:.3e}, tol {tol:.1e})")]
    NoConvergence {
        iterations: usize,
        gap: f64,
        tol: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvrConfig {
    pub nu: f64,
    pub gamma: f64,
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            gamma: 1.25,
            c: 1.0,
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<(), SvrError> {
        let bad = |m: &str| Err(SvrError::BadConfig(m.to_string()));
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad("nu must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c must be positive");
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad("tol must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        Ok(())
    }
}

/// Solver statistics kept with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrDiagnostics {
    pub iterations: usize,
    pub kkt_gap: f64,
    /// Dual objective in maximisation form.
    pub dual_objective: f64,
    /// True when the budget constraint was slack and the tube width is 0.
    pub budget_slack: bool,
    pub n_train: usize,
    pub convention: String,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    support_vectors: Matrix,
    dual_coeffs: Vec<f64>,
    bias: f64,
    epsilon: f64,
    config: SvrConfig,
    diagnostics: SvrDiagnostics,
}

impl SvrModel {
    /// Assembles a model from its parts, e.g. for hand-built test fixtures.
    pub fn from_parts(
        support_vectors: Matrix,
        dual_coeffs: Vec<f64>,
        bias: f64,
        epsilon: f64,
        config: SvrConfig,
    ) -> Self {
        assert_eq!(support_vectors.nrows(), dual_coeffs.len());
        Self {
            support_vectors,
            dual_coeffs,
            bias,
            epsilon,
            config,
            diagnostics: SvrDiagnostics {
                iterations: 0,
                kkt_gap: 0.0,
                dual_objective: 0.0,
                budget_slack: false,
                n_train: 0,
                convention: BOX_CONVENTION.to_string(),
                objective_trace: Vec::new(),
            },
        }
    }

    pub fn support_vectors(&self) -> &Matrix {
        &self.support_vectors
    }

    /// `alpha_i - alpha*_i` per support vector.
    pub fn dual_coeffs(&self) -> &[f64] {
        &self.dual_coeffs
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn config(&self) -> &SvrConfig {
        &self.config
    }

    pub fn diagnostics(&self) -> &SvrDiagnostics {
        &self.diagnostics
    }

    pub fn n_support(&self) -> usize {
        self.dual_coeffs.len()
    }

    pub fn n_features(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let k = Rbf {
            gamma: self.config.gamma,
        };
        self.support_vectors
            .rows_iter()
            .zip(&self.dual_coeffs)
            .map(|(sv, c)| c * k.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict_batch(&self, x: &Matrix) -> Vec<f64> {
        use rayon::prelude::*;
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict(x.row(i)))
            .collect()
    }
}

pub fn svr_fit(train: &Dataset, config: &SvrConfig) -> Result<SvrModel, SvrError> {
    if !train.is_normalized() {
        return Err(SvrError::NotNormalized);
    }
    fit_arrays(train.features(), train.target(), config)
}

pub fn svr_predict(model: &SvrModel, x: &[f64]) -> f64 {
    model.predict(x)
}

/// Fits on raw arrays, without the normalisation check.
pub fn fit_arrays(x: &Matrix, y: &[f64], config: &SvrConfig) -> Result<SvrModel, SvrError> {
    fit_traced(x, y, config, false)
}

/// As [`fit_arrays`], additionally recording the dual objective after every step.
pub fn fit_traced(
    x: &Matrix,
    y: &[f64],
    config: &SvrConfig,
    trace: bool,
) -> Result<SvrModel, SvrError> {
    config.validate()?;
    assert_eq!(x.nrows(), y.len(), "row/target count mismatch");
    let n = y.len();
    if n < 2 {
        return Err(SvrError::TooFewSamples(n));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(SvrError::NonFinite);
    }
    if x.rows_iter().all(|r| r == x.row(0)) {
        return Err(SvrError::DegenerateKernel);
    }

    let upper = config.c / n as f64;
    let budget = config.c * config.nu;
    let kernel = Rbf {
        gamma: config.gamma,
    };
    let mut problem = smo::Problem {
        x,
        y,
        kernel,
        upper,
        tube: 0.0,
        constraints: smo::Constraints::PerSign { sum: budget / 2.0 },
        tol: config.tol,
        max_iter: config.max_iter,
        trace_objective: trace,
    };
    let mut sol = run(&problem, config)?;
    let (_, dual_epsilon) = smo::recover_offsets(&sol.beta, &sol.grad, upper, problem.constraints);
    let mut budget_slack = false;

    if dual_epsilon < 0.0 {
        // A negative multiplier means the budget is not binding: the optimum
        // is the zero-width-tube problem, provided it stays within budget.
        problem.constraints = smo::Constraints::Balanced;
        let relaxed = run(&problem, config)?;
        let used: f64 = relaxed.beta.iter().sum();
        if used <= budget * (1.0 + 1e-9) {
            budget_slack = true;
            sol = relaxed;
        }
    }

    // tube is 0 in the solved problem, so grad = Kd - y on the alpha block
    let residuals: Vec<f64> = sol.grad[..n].iter().map(|g| -g).collect();
    let (bias, epsilon) = if budget_slack {
        (smo::median_offset(&residuals), 0.0)
    } else {
        smo::centred_offsets(&residuals, config.nu)
    };

    let mut rows = Vec::new();
    let mut coeffs = Vec::new();
    for i in 0..n {
        let d = sol.beta[i] - sol.beta[i + n];
        if d != 0.0 {
            rows.push(i);
            coeffs.push(d);
        }
    }
    Ok(SvrModel {
        support_vectors: x.select_rows(&rows),
        dual_coeffs: coeffs,
        bias,
        epsilon,
        config: config.clone(),
        diagnostics: SvrDiagnostics {
            iterations: sol.iterations,
            kkt_gap: sol.gap,
            dual_objective: -sol.objective,
            budget_slack,
            n_train: n,
            convention: BOX_CONVENTION.to_string(),
            objective_trace: sol.trace.iter().map(|f| -f).collect(),
        },
    })
}

fn run(problem: &smo::Problem<'_>, config: &SvrConfig) -> Result<smo::Solution, SvrError> {
    let sol = smo::solve(problem);
    if !sol.converged {
        return Err(SvrError::NoConvergence {
            iterations: sol.iterations,
            gap: sol.gap,
            tol: config.tol,
        });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Matrix {
        Matrix::from_rows(
            &(0..n)
                .map(|i| vec![i as f64 / n as f64, ((i * 7) % n) as f64 / n as f64])
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn constant_target_is_reproduced() {
        let x = grid(25);
        let m = fit_arrays(&x, &[0.37; 25], &SvrConfig::default()).unwrap();
        assert_eq!(m.n_support(), 0);
        assert!((m.bias() - 0.37).abs() < 1e-12);
        assert!((m.predict(&[0.3, 0.9]) - 0.37).abs() < 1e-12);
    }

    #[test]
    fn zero_model_predicts_bias() {
        let m = SvrModel::from_parts(Matrix::zeros(0, 2), vec![], 0.4, 0.0, SvrConfig::default());
        assert_eq!(m.predict(&[0.1, 5.0]), 0.4);
    }

    #[test]
    fn single_support_vector_at_its_centre() {
        let m = SvrModel::from_parts(
            Matrix::from_rows(&[[0.2, 0.7]]),
            vec![0.35],
            0.0,
            0.0,
            SvrConfig::default(),
        );
        assert_eq!(m.predict(&[0.2, 0.7]), 0.35);
    }

    #[test]
    fn two_support_vectors_formula() {
        let cfg = SvrConfig::default();
        let m = SvrModel::from_parts(
            Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]),
            vec![0.5, -0.25],
            0.1,
            0.0,
            cfg.clone(),
        );
        // query (0.5, 0): squared distances 0.25 and 1.25
        let expected = 0.5 * (-1.25f64 * 0.25).exp() - 0.25 * (-1.25f64 * 1.25).exp() + 0.1;
        assert!((m.predict(&[0.5, 0.0]) - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_rejected() {
        let x = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(
            fit_arrays(&x, &[0.1, 0.2, 0.3], &SvrConfig::default()),
            Err(SvrError::DegenerateKernel)
        );
    }

    #[test]
    fn config_validation() {
        for bad in [
            SvrConfig {
                nu: 0.0,
                ..SvrConfig::default()
            },
            SvrConfig {
                nu: 1.5,
                ..SvrConfig::default()
            },
            SvrConfig {
                gamma: -1.0,
                ..SvrConfig::default()
            },
            SvrConfig {
                c: 0.0,
                ..SvrConfig::default()
            },
            SvrConfig {
                tol: 0.0,
                ..SvrConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(SvrError::BadConfig(_))));
        }
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let x = grid(40);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.9).sin().abs()).collect();
        let cfg = SvrConfig {
            max_iter: 1,
            tol: 1e-9,
            ..SvrConfig::default()
        };
        assert!(matches!(
            fit_arrays(&x, &y, &cfg),
            Err(SvrError::NoConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn constraints_hold_after_fit() {
        let x = grid(40);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.9).sin().abs()).collect();
        let cfg = SvrConfig::default();
        let m = fit_traced(&x, &y, &cfg, true).unwrap();
        let bound = cfg.c / 40.0;
        assert!(m.dual_coeffs().iter().all(|c| c.abs() <= bound + 1e-15));
        assert!(m.dual_coeffs().iter().sum::<f64>().abs() <= cfg.tol);
        let trace = &m.diagnostics().objective_trace;
        assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(m.epsilon() > 0.0);
    }
}
