use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pvcast(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvcast"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
seed = 5
output_dir = "out"
[data]
deaccumulate = true
[split]
train_start = "2013-03-01T00:00"
train_end = "2013-04-01T00:00"
validation_start = "2013-04-01T00:00"
validation_end = "2013-04-20T00:00"
test_days = ["2013-04-22", "2013-04-23"]
[knn]
k = 15
[qrf]
n_trees = 10
[nn]
max_epochs = 30
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = pvcast(
        &[
            "synth",
            "--out",
            ".",
            "--start",
            "2013-03-01T00:00",
            "--hours",
            "1440",
            "--accumulated",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

#[test]
fn train_evaluate_report() {
    let dir = workspace();
    let d = dir.path();
    assert!(pvcast(&["train", "-c", "run.toml"], d).status.success());
    let models = d.join("out/models");
    let first: Vec<_> = ["knn", "qrf", "svr", "nn", "ensemble", "scaling"]
        .iter()
        .map(|m| fs::read(models.join(format!("{m}.json"))).unwrap())
        .collect();

    let o = pvcast(&["evaluate", "-c", "run.toml"], d);
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.contains("QRF") && table.contains("Weekly"), "{table}");
    let csv = fs::read_to_string(d.join("out/nmae.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("day,qrf,knn,svr,ens"));
    assert_eq!(csv.lines().count(), 4);

    let o = pvcast(&["report", "-c", "run.toml"], d);
    assert!(o.status.success());

    assert!(pvcast(&["train", "-c", "run.toml"], d).status.success());
    for (m, bytes) in ["knn", "qrf", "svr", "nn", "ensemble", "scaling"]
        .iter()
        .zip(&first)
    {
        assert_eq!(
            &fs::read(models.join(format!("{m}.json"))).unwrap(),
            bytes,
            "{m}"
        );
    }
}

#[test]
fn invalid_config_exits_with_two_before_training() {
    let dir = workspace();
    let d = dir.path();
    let o = pvcast(&["train", "-c", "run.toml", "--set", "knn.k=0"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.join("out").exists());
    let o = pvcast(&["train", "-c", "run.toml", "--set", "knn.bogus=1"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_or_artifacts_exit_with_three() {
    let dir = workspace();
    let d = dir.path();
    let o = pvcast(
        &["train", "-c", "run.toml", "--set", "data.power=nope.csv"],
        d,
    );
    assert_eq!(o.status.code(), Some(3));
    let o = pvcast(&["evaluate", "-c", "run.toml"], d);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}

#[test]
fn oracle_passes_and_reports_corrupted_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = pvcast(&["oracle", "ensemble", "--seed", "42"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("PASS ensemble"), "{text}");

    let o = pvcast(&["oracle", "ensemble", "--corrupt-tolerance"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    let text = stdout(&o);
    assert!(
        text.contains("FAIL") && text.contains("max deviation"),
        "{text}"
    );
}
