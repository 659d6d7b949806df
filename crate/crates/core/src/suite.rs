//! Seeded property checks of every model against the brute-force oracles.
//!
//! Each check draws its own random instances from the suite seed and
//! reports the largest deviation it saw next to the tolerance it applied.

use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{fit_weights, FitOptions};
use crate::knn::{BandwidthRule, KnnModel};
use crate::matrix::Matrix;
use crate::nn::{self, NnTrainConfig, Weights};
use crate::oracle;
use crate::qrf::{weighted_quantile, QrfConfig, QrfModel};
use crate::svr::{fit_arrays, SvrConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub instances: usize,
    /// Largest observed deviation, for checks that measure one.
    pub max_deviation: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {} ({} instances)", self.name, self.instances)?;
        if let (Some(d), Some(t)) = (self.max_deviation, self.tolerance) {
            write!(f, " max deviation {d:.3e} (tolerance {t:.1e})")?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Multiplies every numeric tolerance; 0 forces any nonzero deviation to fail.
    pub tolerance_scale: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            tolerance_scale: 1.0,
        }
    }
}

fn rng_for(options: &SuiteOptions, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(salt);
    rng
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix {
    Matrix::from_vec(n, p, (0..n * p).map(|_| rng.random::<f64>()).collect())
}

fn measured(
    name: &'static str,
    instances: usize,
    max_dev: f64,
    tol: f64,
    detail: String,
) -> CheckResult {
    CheckResult {
        name,
        passed: max_dev < tol,
        instances,
        max_deviation: Some(max_dev),
        tolerance: Some(tol),
        detail,
    }
}

fn exact(name: &'static str, instances: usize, failure: Option<String>) -> CheckResult {
    CheckResult {
        name,
        passed: failure.is_none(),
        instances,
        max_deviation: None,
        tolerance: None,
        detail: failure.unwrap_or_default(),
    }
}

/// SVR predictions at the training points against the dense QP oracle.
pub fn svr_dense_qp(options: &SuiteOptions, instances: usize) -> CheckResult {
    let mut rng = rng_for(options, 1);
    let cfg = SvrConfig::default();
    let mut worst = 0.0f64;
    let mut worst_at = 0;
    for inst in 0..instances {
        let n = rng.random_range(5..=30);
        let p = rng.random_range(1..=5);
        let x = uniform_matrix(&mut rng, n, p);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let model = match fit_arrays(&x, &y, &cfg) {
            Ok(m) => m,
            Err(e) => {
                return exact(
                    "svr_dense_qp",
                    inst + 1,
                    Some(format!("instance {inst}: {e}")),
                )
            }
        };
        let reference = oracle::svr_dense_qp(&x, &y, cfg.nu, cfg.gamma, cfg.c);
        for i in 0..n {
            let d = (model.predict(x.row(i)) - reference.predict(x.row(i))).abs();
            if d > worst {
                worst = d;
                worst_at = inst;
            }
        }
    }
    measured(
        "svr_dense_qp",
        instances,
        worst,
        1e-3 * options.tolerance_scale,
        format!("worst instance {worst_at}"),
    )
}

/// Fractions of support vectors and of points outside the tube against ν.
pub fn svr_nu_property(options: &SuiteOptions, instances: usize) -> CheckResult {
    let mut rng = rng_for(options, 2);
    let cfg = SvrConfig::default();
    let slack = 1e-6 * options.tolerance_scale;
    let mut worst = f64::NEG_INFINITY;
    for inst in 0..instances {
        let n = rng.random_range(5..=30);
        let p = rng.random_range(1..=5);
        let x = uniform_matrix(&mut rng, n, p);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let model = match fit_arrays(&x, &y, &cfg) {
            Ok(m) => m,
            Err(e) => {
                return exact(
                    "svr_nu_property",
                    inst + 1,
                    Some(format!("instance {inst}: {e}")),
                )
            }
        };
        let nf = n as f64;
        let sv_fraction = model.n_support() as f64 / nf;
        let outside = (0..n)
            .filter(|&i| {
                let r = (y[i] - model.predict(x.row(i))).abs();
                r - model.epsilon() > 1e-9
            })
            .count() as f64
            / nf;
        // positive margin means a violation
        let margin = ((cfg.nu - 2.0 / nf) - sv_fraction).max(outside - (cfg.nu + 2.0 / nf));
        worst = worst.max(margin);
        if margin > slack {
            return exact(
                "svr_nu_property",
                inst + 1,
                Some(format!(
                    "instance {inst} (n = {n}): SV fraction {sv_fraction:.4}, outside fraction {outside:.4}"
                )),
            );
        }
    }
    exact("svr_nu_property", instances, None)
        .with_detail(format!("largest bound margin {worst:.3e}"))
}

impl CheckResult {
    fn with_detail(mut self, detail: String) -> Self {
        if self.detail.is_empty() {
            self.detail = detail;
        }
        self
    }
}

/// Single tree grown on all rows against exhaustive CART search.
pub fn qrf_exhaustive_split(options: &SuiteOptions, instances: usize) -> CheckResult {
    let mut rng = rng_for(options, 3);
    for inst in 0..instances {
        let min_leaf = rng.random_range(1..=5);
        let n = rng.random_range(2 * min_leaf..=20);
        let p = rng.random_range(1..=4);
        // every other instance uses a coarse grid so that tied values occur
        let x = if inst % 2 == 0 {
            uniform_matrix(&mut rng, n, p)
        } else {
            Matrix::from_vec(
                n,
                p,
                (0..n * p)
                    .map(|_| rng.random_range(0..5) as f64 / 4.0)
                    .collect(),
            )
        };
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let cfg = QrfConfig {
            n_trees: 1,
            min_samples_leaf: min_leaf,
            mtry: Some(p),
            bootstrap: false,
            seed: inst as u64,
            ..QrfConfig::default()
        };
        let model = match QrfModel::fit(&x, &y, &cfg) {
            Ok(m) => m,
            Err(e) => {
                return exact(
                    "qrf_exhaustive_split",
                    inst + 1,
                    Some(format!("instance {inst}: {e}")),
                )
            }
        };
        let reference = oracle::exhaustive_tree(&x, &y, (0..n).collect(), min_leaf);
        if let Err(e) = oracle::compare_trees(&model.trees()[0], &reference) {
            return exact(
                "qrf_exhaustive_split",
                inst + 1,
                Some(format!("instance {inst}: {e}")),
            );
        }
    }
    exact("qrf_exhaustive_split", instances, None)
}

/// Conditional quantiles are non-decreasing in q at random query points.
pub fn qrf_quantile_monotone(options: &SuiteOptions, queries: usize) -> CheckResult {
    let mut rng = rng_for(options, 4);
    let (n, p) = (200, 3);
    let x = uniform_matrix(&mut rng, n, p);
    let y: Vec<f64> = (0..n)
        .map(|i| (x.get(i, 0) * 3.0).sin().abs() * 0.7 + 0.3 * rng.random::<f64>())
        .collect();
    let cfg = QrfConfig {
        n_trees: 50,
        seed: options.seed,
        ..QrfConfig::default()
    };
    let model = match QrfModel::fit(&x, &y, &cfg) {
        Ok(m) => m,
        Err(e) => return exact("qrf_quantile_monotone", 0, Some(e.to_string())),
    };
    let levels: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    for qi in 0..queries {
        let q: Vec<f64> = (0..p).map(|_| rng.random_range(-0.2..1.2)).collect();
        let mut prev = f64::NEG_INFINITY;
        for &level in &levels {
            let v = model.predict_quantile(&q, level).expect("valid quantile");
            if v < prev {
                return exact(
                    "qrf_quantile_monotone",
                    qi + 1,
                    Some(format!("query {qi}: q = {level} gives {v} < {prev}")),
                );
            }
            prev = v;
        }
    }
    exact("qrf_quantile_monotone", queries, None)
}

/// Weighted quantile against a full scan of the weighted CDF.
pub fn qrf_weighted_quantile(options: &SuiteOptions, instances: usize) -> CheckResult {
    let mut rng = rng_for(options, 5);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..=15);
        let values: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..6) as f64 / 5.0)
            .collect();
        let weights: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.1..2.0)
                }
            })
            .collect();
        if weights.iter().all(|w| *w == 0.0) {
            continue;
        }
        let q = rng.random_range(0.05..0.95);
        let got = weighted_quantile(&values, &weights, q).expect("positive weights");
        let want = oracle::brute_weighted_quantile(&values, &weights, q);
        worst = worst.max((got - want).abs());
    }
    measured(
        "qrf_weighted_quantile",
        instances,
        worst,
        1e-12 * options.tolerance_scale + f64::MIN_POSITIVE,
        String::new(),
    )
}

/// Seeded forests are bit-identical.
pub fn qrf_determinism(options: &SuiteOptions) -> CheckResult {
    let mut rng = rng_for(options, 6);
    let x = uniform_matrix(&mut rng, 120, 4);
    let y: Vec<f64> = (0..120).map(|_| rng.random::<f64>()).collect();
    let cfg = QrfConfig {
        n_trees: 30,
        seed: options.seed,
        ..QrfConfig::default()
    };
    let a = QrfModel::fit(&x, &y, &cfg).expect("valid forest");
    let b = QrfModel::fit(&x, &y, &cfg).expect("valid forest");
    let same_trees = a.trees() == b.trees();
    let same_preds = a
        .predict_batch(&x)
        .iter()
        .zip(b.predict_batch(&x))
        .all(|(u, v)| u.to_bits() == v.to_bits());
    exact(
        "qrf_determinism",
        1,
        (!(same_trees && same_preds)).then(|| "forests differ".to_string()),
    )
}

/// Pseudo-inverse weights against ridge normal equations, plus SSE dominance.
pub fn ensemble_normal_equations(options: &SuiteOptions, instances: usize) -> CheckResult {
    let mut rng = rng_for(options, 7);
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let m = rng.random_range(10..=60);
        let k = rng.random_range(1..=4);
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        // members are noisy copies of the target, as forecasts would be
        let p = Matrix::from_vec(
            m,
            k,
            (0..m * k)
                .map(|t| (y[t / k] + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0))
                .collect(),
        );
        let names: Vec<String> = (0..k).map(|j| format!("m{j}")).collect();
        let w = match fit_weights(&p, &y, &names, FitOptions::default()) {
            Ok(w) => w,
            Err(e) => {
                return exact(
                    "ensemble_normal_equations",
                    inst + 1,
                    Some(format!("instance {inst}: {e}")),
                )
            }
        };
        let Some(reference) = oracle::ridge_normal_equations(&p, &y, 1e-12) else {
            return exact(
                "ensemble_normal_equations",
                inst + 1,
                Some(format!(
                    "instance {inst}: reference system not positive definite"
                )),
            );
        };
        for (a, b) in w.weights().iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
        let sse =
            |pred: &dyn Fn(usize) -> f64| -> f64 { (0..m).map(|i| (pred(i) - y[i]).powi(2)).sum() };
        let ens = sse(&|i| w.predict(p.row(i)).expect("member count"));
        let best_single = (0..k)
            .map(|j| sse(&|i| p.get(i, j)))
            .fold(f64::INFINITY, f64::min);
        if ens > best_single * (1.0 + 1e-12) {
            return exact(
                "ensemble_normal_equations",
                inst + 1,
                Some(format!(
                    "instance {inst}: ensemble SSE {ens} exceeds best member {best_single}"
                )),
            );
        }
    }
    measured(
        "ensemble_normal_equations",
        instances,
        worst,
        1e-6 * options.tolerance_scale,
        String::new(),
    )
}

/// k = 1 exactness, neighbour-range bounds, row-permutation invariance and
/// the wide-kernel global-mean limit.
pub fn knn_properties(options: &SuiteOptions, instances: usize) -> CheckResult {
    let mut rng = rng_for(options, 8);
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let n = rng.random_range(5..=60);
        let p = rng.random_range(1..=5);
        let x = uniform_matrix(&mut rng, n, p);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let k = rng.random_range(1..=n);
        let q: Vec<f64> = (0..p).map(|_| rng.random_range(-0.2..1.2)).collect();
        let fail = |msg: String| {
            exact(
                "knn_properties",
                inst + 1,
                Some(format!("instance {inst}: {msg}")),
            )
        };

        let one = KnnModel::new(
            x.clone(),
            y.clone(),
            1,
            BandwidthRule::MedianNeighbourDistance,
        )
        .expect("valid model");
        for (i, &yi) in y.iter().enumerate() {
            if one.predict(x.row(i)) != yi {
                return fail(format!("k = 1 at training row {i}"));
            }
        }

        let model = KnnModel::new(
            x.clone(),
            y.clone(),
            k,
            BandwidthRule::MedianNeighbourDistance,
        )
        .expect("valid model");
        let nb = model.neighbours(&q);
        let lo = nb.iter().map(|v| y[v.index]).fold(f64::INFINITY, f64::min);
        let hi = nb
            .iter()
            .map(|v| y[v.index])
            .fold(f64::NEG_INFINITY, f64::max);
        let pred = model.predict(&q);
        if pred < lo - 1e-15 || pred > hi + 1e-15 {
            return fail(format!("prediction {pred} outside [{lo}, {hi}]"));
        }

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = KnnModel::new(
            x.select_rows(&perm),
            perm.iter().map(|&i| y[i]).collect(),
            k,
            BandwidthRule::MedianNeighbourDistance,
        )
        .expect("valid model");
        worst = worst.max((shuffled.predict(&q) - pred).abs());

        let wide =
            KnnModel::new(x.clone(), y.clone(), n, BandwidthRule::Fixed(1e6)).expect("valid model");
        let mean = y.iter().sum::<f64>() / n as f64;
        worst = worst.max((wide.predict(&q) - mean).abs());
    }
    measured(
        "knn_properties",
        instances,
        worst,
        1e-6 * options.tolerance_scale,
        String::new(),
    )
}

/// Analytic gradients of `E_D` and `F` against central differences.
pub fn nn_gradient(options: &SuiteOptions, instances: usize) -> CheckResult {
    let mut rng = rng_for(options, 9);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(5..=40);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let params: Vec<f64> = (0..nn::N_PARAMS)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let alpha = rng.random_range(0.001..1.0);
        let beta = rng.random_range(0.1..10.0);
        let w = Weights::from_vec(&params);
        let pairs = [
            (
                nn::data_error_gradient(&w, &x, &y),
                oracle::central_difference(
                    |p| nn::data_error(&Weights::from_vec(p), &x, &y),
                    &params,
                    1e-6,
                ),
            ),
            (
                nn::objective_gradient(&w, &x, &y, alpha, beta),
                oracle::central_difference(
                    |p| nn::objective(&Weights::from_vec(p), &x, &y, alpha, beta),
                    &params,
                    1e-6,
                ),
            ),
        ];
        for (analytic, numeric) in pairs {
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = analytic
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(numeric.iter().map(|b| b * b).sum::<f64>().sqrt())
                .max(1e-300);
            worst = worst.max(diff / scale);
        }
    }
    measured(
        "nn_gradient",
        instances,
        worst,
        1e-5 * options.tolerance_scale,
        String::new(),
    )
}

/// Accepted LM steps never raise `F`, and γ stays in `[0, N_w]` at every epoch.
pub fn nn_training_invariants(options: &SuiteOptions, instances: usize) -> CheckResult {
    let mut rng = rng_for(options, 10);
    let cfg = NnTrainConfig {
        max_epochs: 100,
        ..NnTrainConfig::default()
    };
    let mut steps = 0;
    for inst in 0..instances {
        let n = rng.random_range(20..=120);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let shape = rng.random_range(0.5..4.0);
        let y: Vec<f64> = x
            .iter()
            .map(|v| ((shape * v).sin() * 0.5 + 0.1 * rng.random::<f64>()).max(0.0))
            .collect();
        let model = nn::fit_arrays(&x, &y, Weights::random(options.seed + inst as u64), &cfg);
        let d = model.diagnostics();
        steps += d.accepted_steps.len();
        if let Some(s) = d.accepted_steps.iter().find(|s| s.after > s.before) {
            return exact(
                "nn_training_invariants",
                inst + 1,
                Some(format!(
                    "instance {inst}: F rose from {} to {}",
                    s.before, s.after
                )),
            );
        }
        if let Some(g) = d
            .gamma_history
            .iter()
            .find(|g| !(0.0..=nn::N_PARAMS as f64).contains(*g))
        {
            return exact(
                "nn_training_invariants",
                inst + 1,
                Some(format!("instance {inst}: gamma {g} out of range")),
            );
        }
    }
    exact("nn_training_invariants", instances, None)
        .with_detail(format!("{steps} accepted steps checked"))
}

/// Every check with its standard instance count.
pub fn run_all(options: &SuiteOptions) -> Vec<CheckResult> {
    vec![
        svr_dense_qp(options, 100),
        svr_nu_property(options, 100),
        qrf_exhaustive_split(options, 50),
        qrf_quantile_monotone(options, 1000),
        qrf_weighted_quantile(options, 500),
        qrf_determinism(options),
        ensemble_normal_equations(options, 100),
        knn_properties(options, 100),
        nn_gradient(options, 100),
        nn_training_invariants(options, 20),
    ]
}
