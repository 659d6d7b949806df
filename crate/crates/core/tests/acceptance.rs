//! Acceptance criteria, one PASS/FAIL/SKIP line each. Exits nonzero on any FAIL.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{Duration as Hours, NaiveDate};
use pvcast_core::config::RunConfig;
use pvcast_core::ingest::parse_timestamp;
use pvcast_core::metrics::daily_weekly_report;
use pvcast_core::pipeline;
use pvcast_core::suite::{self, CheckResult, SuiteOptions};
use pvcast_core::synthetic::{self, SyntheticSpec};

/// Reference weekly nMAE (%) and daily values for Feb 20-26 2014, GEFCom2014 zone 1.
#[allow(clippy::approx_constant)]
const REFERENCE: [(&str, f64, [f64; 7]); 4] = [
    ("qrf", 5.61, [5.37, 5.87, 5.23, 5.14, 7.44, 4.67, 5.60]),
    (
        "knn",
        11.29,
        [7.77, 12.72, 11.58, 10.14, 11.09, 12.72, 13.02],
    ),
    ("svr", 6.51, [7.23, 5.40, 4.84, 5.16, 7.24, 7.16, 8.54]),
    ("ens", 5.53, [6.27, 5.92, 4.85, 4.52, 6.28, 5.10, 5.83]),
];

type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn checks(results: &[CheckResult], pinned: &[(&str, Option<f64>)]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (r, (name, tol)) in results.iter().zip(pinned) {
        let pinned_ok = r.name == *name && r.tolerance == *tol;
        ok &= r.passed && pinned_ok;
        lines.push(if pinned_ok {
            r.to_string()
        } else {
            format!("{r} [expected check {name} with tolerance {tol:?}]")
        });
    }
    let text = lines.join("; ");
    if ok {
        Outcome::Pass(text)
    } else {
        Outcome::Fail(text)
    }
}

fn gefcom_zone1_scores() -> Outcome {
    let Some(dir) = std::env::var_os("GEFCOM2014_DIR").map(PathBuf::from) else {
        return Outcome::Skip("GEFCOM2014_DIR not set; the competition data is not bundled".into());
    };
    let (weather, power) = if dir.join("weather.csv").exists() {
        (dir.join("weather.csv"), dir.join("power.csv"))
    } else {
        (dir.join("train15.csv"), dir.join("train15.csv"))
    };
    let mut cfg = RunConfig::default();
    cfg.data.weather = weather;
    cfg.data.power = power;
    cfg.data.deaccumulate = true;
    let out = tempfile::tempdir().expect("temp dir");
    cfg.output_dir = out.path().to_path_buf();
    let start = Instant::now();
    let report = match pipeline::run_train(&cfg).and_then(|_| pipeline::run_evaluate(&cfg)) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("pipeline failed: {e}")),
    };
    let elapsed = start.elapsed();
    let weekly = |m: &str| report.weekly(m).expect("model in report");
    let mut ok = true;
    let mut parts = Vec::new();
    for (model, reference, _) in REFERENCE {
        let got = weekly(model);
        ok &= (got - reference).abs() <= 2.0;
        parts.push(format!("{model} {got:.2} (reference {reference:.2})"));
    }
    let knn_worst = ["qrf", "svr", "ens"]
        .iter()
        .all(|m| weekly("knn") > weekly(m));
    let best = ["qrf", "knn", "svr"]
        .iter()
        .map(|m| weekly(m))
        .fold(f64::INFINITY, f64::min);
    let ens_ok = weekly("ens") <= best + 0.5;
    ok &= knn_worst && ens_ok && elapsed < Duration::from_secs(600);
    let text = format!(
        "{}; kNN worst {knn_worst}; ENS within 0.5 of best {ens_ok}; {elapsed:.1?}",
        parts.join(", ")
    );
    if ok {
        Outcome::Pass(text)
    } else {
        Outcome::Fail(text)
    }
}

fn weekly_aggregation() -> Outcome {
    let first = NaiveDate::from_ymd_opt(2014, 2, 20).unwrap();
    let days: Vec<NaiveDate> = (0..7).map(|d| first + Hours::days(d)).collect();
    let timestamps: Vec<_> = days
        .iter()
        .flat_map(|d| (0..24).map(move |h| d.and_hms_opt(h, 0, 0).unwrap()))
        .collect();
    let actual = vec![0.0; timestamps.len()];
    let models: Vec<(String, Vec<f64>)> = REFERENCE
        .iter()
        .map(|(m, _, daily)| {
            let pred = daily.iter().flat_map(|v| [v / 100.0; 24]).collect();
            (m.to_string(), pred)
        })
        .collect();
    let report = match daily_weekly_report(&timestamps, &actual, &models, &days, 1.0) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (model, reference, _) in REFERENCE {
        let got = report.weekly(model).unwrap();
        worst = worst.max((got - reference).abs());
        parts.push(format!("{model} {got:.4}"));
    }
    let text = format!(
        "{}; max deviation {worst:.4} (tolerance 0.02)",
        parts.join(", ")
    );
    if worst <= 0.02 {
        Outcome::Pass(text)
    } else {
        Outcome::Fail(text)
    }
}

fn svr_oracle(opts: &SuiteOptions) -> Outcome {
    let start = Instant::now();
    let results = [
        suite::svr_dense_qp(opts, 100),
        suite::svr_nu_property(opts, 100),
    ];
    let elapsed = start.elapsed();
    let outcome = checks(
        &results,
        &[("svr_dense_qp", Some(1e-3)), ("svr_nu_property", None)],
    );
    let timing = format!("; {elapsed:.1?} (limit 60 s)");
    match outcome {
        Outcome::Pass(t) if elapsed < Duration::from_secs(60) => Outcome::Pass(t + &timing),
        Outcome::Pass(t) | Outcome::Fail(t) | Outcome::Skip(t) => Outcome::Fail(t + &timing),
    }
}

fn qrf_oracle(opts: &SuiteOptions) -> Outcome {
    checks(
        &[
            suite::qrf_exhaustive_split(opts, 50),
            suite::qrf_quantile_monotone(opts, 1000),
            suite::qrf_determinism(opts),
        ],
        &[
            ("qrf_exhaustive_split", None),
            ("qrf_quantile_monotone", None),
            ("qrf_determinism", None),
        ],
    )
}

fn ensemble_optimality(opts: &SuiteOptions) -> Outcome {
    checks(
        &[suite::ensemble_normal_equations(opts, 100)],
        &[("ensemble_normal_equations", Some(1e-6))],
    )
}

fn knn_properties(opts: &SuiteOptions) -> Outcome {
    checks(
        &[suite::knn_properties(opts, 100)],
        &[("knn_properties", Some(1e-6))],
    )
}

fn nn_numerics(opts: &SuiteOptions) -> Outcome {
    checks(
        &[
            suite::nn_gradient(opts, 100),
            suite::nn_training_invariants(opts, 20),
        ],
        &[
            ("nn_gradient", Some(1e-5)),
            ("nn_training_invariants", None),
        ],
    )
}

fn small_run(data: &Path, out: &Path) -> RunConfig {
    let text = format!(
        r#"
output_dir = "{out}"
[data]
weather = "{data}/weather.csv"
power = "{data}/power.csv"
deaccumulate = true
[split]
train_start = "2013-03-01T00:00"
train_end = "2013-04-15T00:00"
validation_start = "2013-04-15T00:00"
validation_end = "2013-05-01T00:00"
test_days = ["2013-05-03", "2013-05-04", "2013-05-05", "2013-05-06", "2013-05-07", "2013-05-08", "2013-05-09"]
[knn]
k = 50
[qrf]
n_trees = 50
"#,
        out = out.display(),
        data = data.display()
    );
    RunConfig::from_toml_str(&text).expect("valid config")
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let spec = SyntheticSpec {
        zone: 1,
        start: parse_timestamp("2013-03-01T00:00").unwrap(),
        hours: 24 * 75,
        seed: 11,
        accumulated: true,
        run_start_hour: 1,
    };
    if let Err(e) = synthetic::write_files(&spec, tmp.path()) {
        return Outcome::Fail(e.to_string());
    }
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let cfg = small_run(tmp.path(), &tmp.path().join(run));
        let result = pipeline::run_train(&cfg).and_then(|_| pipeline::run_predict(&cfg));
        if let Err(e) = result {
            return Outcome::Fail(format!("run {run}: {e}"));
        }
        files.push(std::fs::read(cfg.output_dir.join(pipeline::PREDICTIONS_FILE)).unwrap());
    }
    let text = format!("two runs, {} bytes each", files[0].len());
    if files[0] == files[1] {
        Outcome::Pass(text)
    } else {
        Outcome::Fail(text + ", contents differ")
    }
}

fn main() {
    let opts = SuiteOptions::default();
    let criteria: [Criterion; 8] = [
        ("1 gefcom zone 1 scores", Box::new(gefcom_zone1_scores)),
        ("2 weekly aggregation", Box::new(weekly_aggregation)),
        ("3 svr oracle", Box::new(move || svr_oracle(&opts))),
        ("4 qrf oracle", Box::new(move || qrf_oracle(&opts))),
        (
            "5 ensemble optimality",
            Box::new(move || ensemble_optimality(&opts)),
        ),
        ("6 knn properties", Box::new(move || knn_properties(&opts))),
        ("7 nn numerics", Box::new(move || nn_numerics(&opts))),
        ("8 end-to-end determinism", Box::new(end_to_end_determinism)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Outcome::Pass(d) => println!("PASS {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
