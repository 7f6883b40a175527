use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use attsolver::data::read_dataset;

const SMALL: &[&str] = &[
    "--set",
    "data.n_train=6",
    "--set",
    "data.n_val=3",
    "--set",
    "data.n_test=3",
    "--set",
    "data.t_end=1",
    "--set",
    "train.architecture.hidden=8",
    "--set",
    "train.batch_size=4",
];

fn attsolver(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attsolver"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = attsolver(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn test_mse(stdout: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("test_mse "))
        .expect("test_mse line")
        .to_string()
}

fn curve_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let mut cols: Vec<String> = l.split(',').map(String::from).collect();
            cols.pop();
            cols
        })
        .collect()
}

#[test]
fn generate_round_trips_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["generate"]);
    assert!(stdout.contains("M=6 N=5 d=4 k=200"), "{stdout}");
    let data = dir.path().join("data");
    let ds = read_dataset(data.join("train.atts")).unwrap();
    assert_eq!((ds.len(), ds.n_steps(), ds.dim), (6, 5, 4));
    assert!(data.join("train.atts.json").exists());
    let first = fs::read(data.join("test.atts")).unwrap();
    ok(dir.path(), &["generate"]);
    assert_eq!(first, fs::read(data.join("test.atts")).unwrap());
}

#[test]
fn bad_step_ratio_names_the_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = attsolver(dir.path(), &["generate", "--set", "data.dt_coarse=0.15", "--set", "data.dt_fine=0.04"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("data.dt_coarse") && err.contains("data.dt_fine"), "{err}");
    assert!(!dir.path().join("data").exists());
}

#[test]
fn frozen_training_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"]);
    let args = ["--set", "train.learning_rate=0", "--set", "train.epochs=3"];
    ok(dir.path(), &[&["train"], &args[..]].concat());
    assert_eq!(curve_rows(&dir.path().join("curves.csv")).len(), 3);
    for f in ["best.attw", "last.attw", "state.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let eval = test_mse(&ok(dir.path(), &["eval"]));
    let base = test_mse(&ok(dir.path(), &["baseline"]));
    assert_eq!(eval, base);
}

#[test]
fn missing_dataset_fails_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = attsolver(dir.path(), &["train"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.atts"));
    assert!(!dir.path().join("best.attw").exists());
    assert!(!dir.path().join("last.attw").exists());
}

#[test]
fn resume_matches_straight_training() {
    let straight = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();
    for d in [&straight, &resumed] {
        ok(d.path(), &["generate"]);
    }
    ok(straight.path(), &["train", "--set", "train.epochs=4"]);
    ok(resumed.path(), &["train", "--set", "train.epochs=2"]);
    ok(resumed.path(), &["train", "--resume", "--set", "train.epochs=4"]);
    let a = curve_rows(&straight.path().join("curves.csv"));
    let b = curve_rows(&resumed.path().join("curves.csv"));
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
    assert_eq!(
        fs::read(straight.path().join("last.attw")).unwrap(),
        fs::read(resumed.path().join("last.attw")).unwrap()
    );
}

#[test]
fn bench_writes_steps_per_second() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["bench", "--set", "experiment.bench_steps=1000", "--set", "experiment.bench_repeats=1"],
    );
    let csv = fs::read_to_string(dir.path().join("reports/speed_runs.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("steps_per_second"), "{csv}");
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn bad_invocations_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = attsolver(dir.path(), &["frobnicate"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["generate", "train", "eval", "sweep", "ablate", "multiplicative", "attack", "probe", "bench"] {
        assert!(err.contains(name), "{err}");
    }
    assert!(!attsolver(dir.path(), &["generate", "--set", "train.learning_rat=1"]).status.success());
    assert!(!attsolver(dir.path(), &["eval"]).status.success());
}

#[test]
fn sweep_reports_are_reproducible() {
    let args = ["sweep", "--set", "train.epochs=1", "--seed", "3", "--jobs", "1"];
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        ok(dir.path(), &["generate"]);
        ok(dir.path(), &args);
        reports.push(fs::read(dir.path().join("reports/data_reduction.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}
