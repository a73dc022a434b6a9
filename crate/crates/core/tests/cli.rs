//! End-to-end tests of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptive-ensemble"))
        .args(args)
        .output()
        .expect("spawn binary")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"))
}

/// gen-data -> two models -> prediction log, inside `dir`.
fn pipeline(dir: &Path) {
    let run = |args: &[&str]| {
        let out = cli(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let data = dir.join("data.csv");
    run(&["gen-data", "--n", "200", "--seed", "5", "--out", s(&data)]);
    for seed in ["1", "2"] {
        let model = dir.join(format!("m{seed}.json"));
        run(&["train", "--data", s(&data), "--hidden", "4", "--epochs", "30", "--seed", seed, "--out", s(&model)]);
    }
    let models = format!("{},{}", s(&dir.join("m1.json")), s(&dir.join("m2.json")));
    run(&["predict-log", "--models", &models, "--data", s(&data), "--out", s(&dir.join("log.jsonl"))]);
}

#[test]
fn gen_data_writes_labelled_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    assert!(cli(&["gen-data", "--n", "50", "--seed", "3", "--out", s(&out)]).status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,label"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let (x, y): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        assert!(f[2] == "0" || f[2] == "1");
    }
}

#[test]
fn invalid_flag_value_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["gen-data", "--n", "0", "--out", s(&dir.path().join("d.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "usage");
    assert!(err["error"].as_str().unwrap().contains("--n"));

    let out = cli(&["run", "--log", "x", "--out", "y", "--policy", "cl:1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["error"].as_str().unwrap().contains("--policy"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = cli(&["train", "--data", s(&missing), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "io");
    assert!(err["error"].as_str().unwrap().contains("nope.csv"));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn short_log_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("l.jsonl");
    std::fs::write(&log, "{\"id\":\"a\",\"label\":0,\"preds\":[[0.6,0.4]]}\n").unwrap();
    let out = cli(&["run", "--log", s(&log), "--max-preds", "2", "--out", s(&dir.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["kind"], "data");
}

#[test]
fn every_subcommand_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        pipeline(dir);
        let log = dir.join("log.jsonl");
        let both = format!("{},{}", s(&log), s(&log));
        for args in [
            vec!["interleave", "--logs", &both, "--out", s(&dir.join("merged.jsonl"))],
            vec!["run", "--log", s(&log), "--max-preds", "2", "--out", s(&dir.join("run.jsonl")), "--summary", s(&dir.join("summary.json"))],
            vec!["buckets", "--log", s(&log), "--out", s(&dir.join("buckets.csv"))],
            vec!["sweep", "--log", s(&log), "--max-preds", "2", "--out", s(&dir.join("sweep.csv"))],
        ] {
            assert!(cli(&args).status.success(), "{args:?}");
        }
    }
    for f in ["data.csv", "m1.json", "m2.json", "log.jsonl", "merged.jsonl", "run.jsonl", "summary.json", "buckets.csv", "sweep.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f} differs between runs");
    }
}

#[test]
fn run_summary_and_report_headers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let log = s(&d.join("log.jsonl")).to_owned();
    let out = cli(&["run", "--log", &log, "--policy", "static:0.9", "--max-preds", "2", "--out", s(&d.join("r.jsonl"))]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["policy", "N", "samples", "total_predictions", "mean_predictions_used", "errors", "error_rate", "reasons", "ci_evaluations"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(summary["policy"], "static:0.9");
    assert_eq!(summary["samples"], 200);
    let lines = std::fs::read_to_string(d.join("r.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 200);

    assert!(cli(&["buckets", "--log", &log, "--out", s(&d.join("b.csv"))]).status.success());
    let buckets = std::fs::read_to_string(d.join("b.csv")).unwrap();
    assert_eq!(buckets.lines().count(), 11);
    assert!(buckets.starts_with("bucket,"));

    assert!(cli(&["sweep", "--log", &log, "--max-preds", "2", "--policies", "cl:0.9,static:0.8", "--out", s(&d.join("s.csv"))]).status.success());
    let sweep = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().collect();
    assert!(rows[0].starts_with("policy,"));
    assert_eq!(rows.len(), 1 + 2 + 2);
}

#[test]
fn help_and_version() {
    for sub in ["gen-data", "train", "predict-log", "interleave", "run", "buckets", "sweep"] {
        let out = cli(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--out"), "{sub}");
    }
    let out = cli(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}
