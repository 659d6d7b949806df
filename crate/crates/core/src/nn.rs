//! Single-input network with one hidden layer of three logistic units and a
//! linear output, trained by Levenberg-Marquardt with Bayesian
//! regularisation.
//!
//! The training objective is `F = beta * E_D + alpha * E_W`, where `E_D` is
//! the sum of squared errors and `E_W` the sum of squared parameters. After
//! each accepted step the hyperparameters are re-estimated from the evidence
//! approximation
//!
//! ```text
//! gamma = N_w - alpha * tr(A^-1),   A = beta JᵀJ + alpha I
//! alpha = gamma / (2 E_W),          beta = (n - gamma) / (2 E_D)
//! ```
//!
//! `A` is the Gauss-Newton Hessian of `F / 2`.

use nalgebra::{SMatrix, SVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;

pub const HIDDEN: usize = 3;
/// Number of free parameters: input weights, hidden biases, output weights, output bias.
pub const N_PARAMS: usize = 3 * HIDDEN + 1;

const PARAM_FLOOR: f64 = 1e-12;
const HYPER_MIN: f64 = 1e-10;
const HYPER_MAX: f64 = 1e10;
const JITTER: f64 = 1e-10;

type Square = SMatrix<f64, N_PARAMS, N_PARAMS>;
type Vector = SVector<f64, N_PARAMS>;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("expected exactly one input feature, got {0}")]
    FeatureCount(usize),
    #[error("training data must be normalized")]
    NotNormalized,
    #[error("training window is empty")]
    EmptyWindow,
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnTrainConfig {
    pub max_epochs: usize,
    pub mu_init: f64,
    pub mu_inc: f64,
    pub mu_dec: f64,
    pub mu_max: f64,
    pub grad_tol: f64,
    pub alpha_init: f64,
    pub beta_init: f64,
    pub seed: u64,
}

impl Default for NnTrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            mu_init: 0.005,
            mu_inc: 10.0,
            mu_dec: 0.1,
            mu_max: 1e10,
            grad_tol: 1e-7,
            alpha_init: 0.01,
            beta_init: 1.0,
            seed: 42,
        }
    }
}

impl NnTrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let positive = [
            ("mu_init", self.mu_init),
            ("mu_inc", self.mu_inc),
            ("mu_dec", self.mu_dec),
            ("mu_max", self.mu_max),
            ("grad_tol", self.grad_tol),
            ("alpha_init", self.alpha_init),
            ("beta_init", self.beta_init),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(NnError::BadConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_epochs == 0 {
            return Err(NnError::BadConfig("max_epochs must be positive".into()));
        }
        if self.mu_inc <= 1.0 || self.mu_dec >= 1.0 {
            return Err(NnError::BadConfig(
                "mu_inc must exceed 1 and mu_dec must be below 1".into(),
            ));
        }
        if self.mu_init > self.mu_max {
            return Err(NnError::BadConfig("mu_init exceeds mu_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxEpochs,
    DampingOverflow,
    SingularHessian,
    /// A warm-started refit did not improve the window objective and the
    /// starting weights were kept.
    KeptStart,
}

/// One accepted Levenberg-Marquardt step, with `F` evaluated under the
/// hyperparameters in force during the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptedStep {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnDiagnostics {
    pub epochs: usize,
    pub stop: StopReason,
    pub objective: f64,
    pub gamma_history: Vec<f64>,
    #[serde(skip)]
    pub accepted_steps: Vec<AcceptedStep>,
}

/// Parameters packed as `[w1 (3), b1 (3), w2 (3), b2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: [f64; HIDDEN],
    pub b1: [f64; HIDDEN],
    pub w2: [f64; HIDDEN],
    pub b2: f64,
}

impl Weights {
    pub fn zeros() -> Self {
        Self {
            w1: [0.0; HIDDEN],
            b1: [0.0; HIDDEN],
            w2: [0.0; HIDDEN],
            b2: 0.0,
        }
    }

    /// Uniform in `[-0.5, 0.5]`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = [0.0; N_PARAMS];
        for v in &mut p {
            *v = rng.random_range(-0.5..=0.5);
        }
        Self::from_vec(&p)
    }

    pub fn to_vec(&self) -> [f64; N_PARAMS] {
        let mut p = [0.0; N_PARAMS];
        p[..HIDDEN].copy_from_slice(&self.w1);
        p[HIDDEN..2 * HIDDEN].copy_from_slice(&self.b1);
        p[2 * HIDDEN..3 * HIDDEN].copy_from_slice(&self.w2);
        p[3 * HIDDEN] = self.b2;
        p
    }

    pub fn from_vec(p: &[f64]) -> Self {
        assert_eq!(p.len(), N_PARAMS, "parameter vector length");
        let mut w = Self::zeros();
        w.w1.copy_from_slice(&p[..HIDDEN]);
        w.b1.copy_from_slice(&p[HIDDEN..2 * HIDDEN]);
        w.w2.copy_from_slice(&p[2 * HIDDEN..3 * HIDDEN]);
        w.b2 = p[3 * HIDDEN];
        w
    }

    pub fn all_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: f64) -> f64 {
        let mut out = self.b2;
        for j in 0..HIDDEN {
            out += self.w2[j] * logistic(self.w1[j] * x + self.b1[j]);
        }
        out
    }

    /// Output and its derivative with respect to every parameter.
    fn forward_with_jacobian(&self, x: f64) -> (f64, [f64; N_PARAMS]) {
        let mut jac = [0.0; N_PARAMS];
        let mut out = self.b2;
        for j in 0..HIDDEN {
            let h = logistic(self.w1[j] * x + self.b1[j]);
            let dh = self.w2[j] * h * (1.0 - h);
            out += self.w2[j] * h;
            jac[j] = dh * x;
            jac[HIDDEN + j] = dh;
            jac[2 * HIDDEN + j] = h;
        }
        jac[3 * HIDDEN] = 1.0;
        (out, jac)
    }

    pub fn sum_squares(&self) -> f64 {
        self.to_vec().iter().map(|v| v * v).sum()
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    weights: Weights,
    alpha: f64,
    beta: f64,
    gamma_eff: f64,
    rng_seed: u64,
    diagnostics: NnDiagnostics,
}

impl NnModel {
    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma_eff(&self) -> f64 {
        self.gamma_eff
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn diagnostics(&self) -> &NnDiagnostics {
        &self.diagnostics
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.weights.forward(x)
    }

    pub fn predict_batch(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.predict(v)).collect()
    }

    /// `F` on the given data under this model's hyperparameters.
    pub fn objective(&self, x: &[f64], y: &[f64]) -> f64 {
        objective(&self.weights, x, y, self.alpha, self.beta)
    }
}

/// Sum of squared errors `E_D`.
pub fn data_error(w: &Weights, x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - w.forward(xi)).powi(2))
        .sum()
}

pub fn objective(w: &Weights, x: &[f64], y: &[f64], alpha: f64, beta: f64) -> f64 {
    beta * data_error(w, x, y) + alpha * w.sum_squares()
}

/// Analytic gradient of `E_D` with respect to the packed parameters.
pub fn data_error_gradient(w: &Weights, x: &[f64], y: &[f64]) -> [f64; N_PARAMS] {
    let mut g = [0.0; N_PARAMS];
    for (&xi, &yi) in x.iter().zip(y) {
        let (f, jac) = w.forward_with_jacobian(xi);
        let e = yi - f;
        for (gk, jk) in g.iter_mut().zip(jac) {
            *gk -= 2.0 * e * jk;
        }
    }
    g
}

/// Analytic gradient of `F = beta E_D + alpha E_W`.
pub fn objective_gradient(
    w: &Weights,
    x: &[f64],
    y: &[f64],
    alpha: f64,
    beta: f64,
) -> [f64; N_PARAMS] {
    let gd = data_error_gradient(w, x, y);
    let p = w.to_vec();
    let mut g = [0.0; N_PARAMS];
    for k in 0..N_PARAMS {
        g[k] = beta * gd[k] + 2.0 * alpha * p[k];
    }
    g
}

/// `JᵀJ` and `Jᵀe` for the residuals `e = y - f`.
fn normal_terms(w: &Weights, x: &[f64], y: &[f64]) -> (Square, Vector, f64) {
    let mut jtj = Square::zeros();
    let mut jte = Vector::zeros();
    let mut sse = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let (f, jac) = w.forward_with_jacobian(xi);
        let j = Vector::from_row_slice(&jac);
        let e = yi - f;
        sse += e * e;
        jtj += j * j.transpose();
        jte += j * e;
    }
    (jtj, jte, sse)
}

fn cholesky_solve(a: &Square, b: &Vector) -> Option<(Vector, Square)> {
    let attempt = |m: Square| {
        let chol = m.cholesky()?;
        let x = chol.solve(b);
        let inv = chol.inverse();
        Some((x, inv))
    };
    attempt(*a).or_else(|| attempt(a + Square::identity() * JITTER))
}

fn evidence_update(
    jtj: &Square,
    alpha: f64,
    beta: f64,
    e_d: f64,
    e_w: f64,
    n: usize,
) -> Option<(f64, f64, f64)> {
    let a = jtj * beta + Square::identity() * alpha;
    let (_, inv) = cholesky_solve(&a, &Vector::zeros())?;
    let gamma = (N_PARAMS as f64 - alpha * inv.trace()).clamp(0.0, N_PARAMS as f64);
    let new_alpha = (gamma / (2.0 * e_w.max(PARAM_FLOOR))).clamp(HYPER_MIN, HYPER_MAX);
    let new_beta =
        ((n as f64 - gamma).max(0.0) / (2.0 * e_d.max(PARAM_FLOOR))).clamp(HYPER_MIN, HYPER_MAX);
    Some((gamma, new_alpha, new_beta))
}

struct Start {
    weights: Weights,
    alpha: f64,
    beta: f64,
}

fn train(x: &[f64], y: &[f64], start: Start, config: &NnTrainConfig) -> NnModel {
    let n = x.len();
    let mut w = start.weights;
    let mut alpha = start.alpha;
    let mut beta = start.beta;
    let mut mu = config.mu_init;
    let mut gamma = N_PARAMS as f64;
    let mut gamma_history = Vec::new();
    let mut accepted_steps = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut epochs = 0;

    while epochs < config.max_epochs {
        let grad = objective_gradient(&w, x, y, alpha, beta);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < config.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        epochs += 1;
        let (jtj, jte, sse) = normal_terms(&w, x, y);
        let p = Vector::from_row_slice(&w.to_vec());
        let f_now = beta * sse + alpha * p.norm_squared();
        // descent direction of F / 2: beta Jᵀe - alpha p
        let rhs = jte * beta - p * alpha;
        let mut accepted = None;
        let mut singular = false;
        while mu <= config.mu_max {
            let a = jtj * beta + Square::identity() * (alpha + mu);
            let Some((delta, _)) = cholesky_solve(&a, &rhs) else {
                singular = true;
                break;
            };
            let trial = Weights::from_vec((p + delta).as_slice());
            let f_trial = objective(&trial, x, y, alpha, beta);
            if trial.all_finite() && f_trial.is_finite() && f_trial < f_now {
                accepted = Some((trial, f_trial));
                mu *= config.mu_dec;
                break;
            }
            mu *= config.mu_inc;
        }
        if singular {
            stop = StopReason::SingularHessian;
            break;
        }
        let Some((next, f_next)) = accepted else {
            stop = StopReason::DampingOverflow;
            break;
        };
        accepted_steps.push(AcceptedStep {
            before: f_now,
            after: f_next,
        });
        w = next;

        let (jtj, _, sse) = normal_terms(&w, x, y);
        match evidence_update(&jtj, alpha, beta, sse, w.sum_squares(), n) {
            Some((g, a, b)) => {
                gamma = g;
                alpha = a;
                beta = b;
                gamma_history.push(g);
            }
            None => {
                stop = StopReason::SingularHessian;
                break;
            }
        }
    }

    let obj = objective(&w, x, y, alpha, beta);
    NnModel {
        weights: w,
        alpha,
        beta,
        gamma_eff: gamma,
        rng_seed: config.seed,
        diagnostics: NnDiagnostics {
            epochs,
            stop,
            objective: obj,
            gamma_history,
            accepted_steps,
        },
    }
}

fn check_data(data: &Dataset) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    if data.n_features() != 1 {
        return Err(NnError::FeatureCount(data.n_features()));
    }
    if !data.is_normalized() {
        return Err(NnError::NotNormalized);
    }
    if data.is_empty() {
        return Err(NnError::EmptyWindow);
    }
    let x = data.features().column(0);
    let y = data.target().to_vec();
    if x.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite);
    }
    Ok((x, y))
}

pub fn nn_fit(train_set: &Dataset, config: &NnTrainConfig) -> Result<NnModel, NnError> {
    config.validate()?;
    let (x, y) = check_data(train_set)?;
    Ok(fit_arrays(&x, &y, Weights::random(config.seed), config))
}

/// Trains from explicit initial weights on raw arrays.
pub fn fit_arrays(x: &[f64], y: &[f64], init: Weights, config: &NnTrainConfig) -> NnModel {
    assert_eq!(x.len(), y.len(), "input/target length mismatch");
    train(
        x,
        y,
        Start {
            weights: init,
            alpha: config.alpha_init,
            beta: config.beta_init,
        },
        config,
    )
}

/// Warm-started refit on a new window.
///
/// If the result scores worse than the starting weights on the window
/// (under the starting hyperparameters) the starting model is returned.
pub fn nn_refit_weekly(
    model: &NnModel,
    window: &Dataset,
    config: &NnTrainConfig,
) -> Result<NnModel, NnError> {
    config.validate()?;
    let (x, y) = check_data(window)?;
    Ok(refit_arrays(model, &x, &y, config))
}

pub fn refit_arrays(model: &NnModel, x: &[f64], y: &[f64], config: &NnTrainConfig) -> NnModel {
    assert_eq!(x.len(), y.len(), "input/target length mismatch");
    let refit = train(
        x,
        y,
        Start {
            weights: model.weights,
            alpha: model.alpha,
            beta: model.beta,
        },
        config,
    );
    let before = model.objective(x, y);
    let after = objective(&refit.weights, x, y, model.alpha, model.beta);
    if after <= before {
        return refit;
    }
    let mut kept = model.clone();
    kept.diagnostics = NnDiagnostics {
        epochs: refit.diagnostics.epochs,
        stop: StopReason::KeptStart,
        objective: before,
        gamma_history: refit.diagnostics.gamma_history,
        accepted_steps: refit.diagnostics.accepted_steps,
    };
    kept
}

pub fn nn_predict(model: &NnModel, x: f64) -> f64 {
    model.predict(x)
}

/// Builds a model from explicit weights and hyperparameters.
pub fn from_weights(weights: Weights, alpha: f64, beta: f64) -> NnModel {
    NnModel {
        weights,
        alpha,
        beta,
        gamma_eff: N_PARAMS as f64,
        rng_seed: 0,
        diagnostics: NnDiagnostics {
            epochs: 0,
            stop: StopReason::MaxEpochs,
            objective: f64::NAN,
            gamma_history: Vec::new(),
            accepted_steps: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, slope: f64) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y = x.iter().map(|v| slope * v).collect();
        (x, y)
    }

    #[test]
    fn zero_targets_from_zero_weights_stay_put() {
        let (x, _) = ramp(50, 0.0);
        let y = vec![0.0; 50];
        let m = fit_arrays(&x, &y, Weights::zeros(), &NnTrainConfig::default());
        assert_eq!(*m.weights(), Weights::zeros());
        assert!(x.iter().all(|&v| m.predict(v) == 0.0));
        assert_eq!(m.diagnostics().stop, StopReason::GradientTolerance);
    }

    #[test]
    fn learns_linear_ramp() {
        let (x, y) = ramp(500, 0.8);
        let m = fit_arrays(&x, &y, Weights::random(7), &NnTrainConfig::default());
        let rmse = (data_error(m.weights(), &x, &y) / 500.0).sqrt();
        assert!(rmse < 0.02, "rmse {rmse}");
    }

    #[test]
    fn output_bias_only() {
        let mut w = Weights::zeros();
        w.b2 = 0.3;
        let m = from_weights(w, 1.0, 1.0);
        for x in [-3.0, 0.0, 0.4, 10.0] {
            assert_eq!(m.predict(x), 0.3);
        }
    }

    #[test]
    fn formula_at_zero_input() {
        let w = Weights {
            w1: [1.5, -2.0, 0.3],
            b1: [0.2, -0.7, 1.1],
            w2: [0.4, 0.9, -0.6],
            b2: 0.05,
        };
        let expected = 0.05 + 0.4 / (1.0 + (-0.2f64).exp()) + 0.9 / (1.0 + 0.7f64.exp())
            - 0.6 / (1.0 + (-1.1f64).exp());
        assert!((w.forward(0.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn hidden_permutation_invariance() {
        let w = Weights::random(3);
        let perm = [2, 0, 1];
        let mut q = w;
        for (dst, &src) in perm.iter().enumerate() {
            q.w1[dst] = w.w1[src];
            q.b1[dst] = w.b1[src];
            q.w2[dst] = w.w2[src];
        }
        for x in [0.0, 0.25, 0.9] {
            assert!((w.forward(x) - q.forward(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let (x, _) = ramp(100, 0.0);
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() * 0.5 + 0.2).collect();
        let cfg = NnTrainConfig::default();
        let a = fit_arrays(&x, &y, Weights::random(cfg.seed), &cfg);
        let b = fit_arrays(&x, &y, Weights::random(cfg.seed), &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn accepted_steps_descend_and_gamma_bounded() {
        let (x, _) = ramp(200, 0.0);
        let y: Vec<f64> = x.iter().map(|v| 0.6 * v * v + 0.1).collect();
        let m = fit_arrays(&x, &y, Weights::random(11), &NnTrainConfig::default());
        assert!(!m.diagnostics().accepted_steps.is_empty());
        for s in &m.diagnostics().accepted_steps {
            assert!(s.after <= s.before);
        }
        for g in &m.diagnostics().gamma_history {
            assert!((0.0..=N_PARAMS as f64).contains(g));
        }
        assert!(m.alpha() > 0.0 && m.beta() > 0.0);
    }

    #[test]
    fn refit_on_same_data_does_not_worsen() {
        let (x, _) = ramp(120, 0.0);
        let y: Vec<f64> = x.iter().map(|v| (2.0 * v).sin() * 0.4).collect();
        let cfg = NnTrainConfig {
            max_epochs: 20,
            ..NnTrainConfig::default()
        };
        let m = fit_arrays(&x, &y, Weights::random(5), &cfg);
        let r = refit_arrays(&m, &x, &y, &cfg);
        assert!(objective(r.weights(), &x, &y, m.alpha(), m.beta()) <= m.objective(&x, &y));
    }

    #[test]
    fn config_validation() {
        assert!(NnTrainConfig::default().validate().is_ok());
        let bad = NnTrainConfig {
            mu_inc: 0.5,
            ..NnTrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = NnTrainConfig {
            max_epochs: 0,
            ..NnTrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
