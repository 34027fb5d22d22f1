use std::path::Path;

use fbsvie::cli::{run, EXIT_ASSERT, EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK};
use serde_json::Value;

fn call(args: &[&str]) -> i32 {
    let mut v = vec!["fbsvie"];
    v.extend_from_slice(args);
    run(v)
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_report(dir: &Path, sub: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{sub}.report.json"))).unwrap()).unwrap()
}

const SMALL: [&str; 4] = ["--n-paths", "500", "--n-steps", "8"];

#[test]
fn unknown_subcommand_is_rejected_without_output() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    assert_eq!(call(&["frobnicate", "--out", out.to_str().unwrap()]), EXIT_INVALID);
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_rejected_without_output() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"n_paths": 100, "colour": "blue"}"#);
    let out = d.path().join("out");
    assert_eq!(call(&["simulate-forward", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_INVALID);
    assert!(!out.exists());
}

#[test]
fn invalid_values_map_to_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    assert_eq!(call(&["simulate-forward", "--n-paths", "1", "--out", out]), EXIT_INVALID);
    assert_eq!(call(&["simulate-forward", "--threads", "0", "--out", out]), EXIT_INVALID);
    let cfg = write_config(d.path(), r#"{"problem": "example42", "terminal": "sideways"}"#);
    assert_eq!(call(&["solve-backward", "--config", &cfg, "--out", out]), EXIT_INVALID);
    let cfg = write_config(d.path(), r#"{"problem": "example41"}"#);
    assert_eq!(call(&["reproduce-example42", "--config", &cfg, "--out", out]), EXIT_INVALID);
}

#[test]
fn divergence_maps_to_exit_three() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(
        d.path(),
        r#"{"problem": "example42", "terminal": "control", "n_paths": 200, "n_steps": 8,
            "example42": {"a": 1e300, "b": 0.0, "rho": {"constant": {"value": 0.5}}}}"#,
    );
    let out = d.path().join("out");
    assert_eq!(call(&["solve-backward", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_NUMERICAL);
    assert!(!out.exists());
}

#[test]
fn report_carries_run_metadata() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let mut args = vec!["simulate-forward", "--seed", "9", "--out", out];
    args.extend(SMALL);
    assert_eq!(call(&args), EXIT_OK);
    let r = read_report(d.path(), "simulate-forward");
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["version"], format!("v{}", env!("CARGO_PKG_VERSION")));
    assert_eq!(r["seed"], 9);
    assert_eq!(r["n_steps"], 8);
    assert_eq!(r["n_paths"], 500);
    assert_eq!(r["result"]["mean"].as_array().unwrap().len(), 9);
    let timing: Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("simulate-forward.timing.json")).unwrap()).unwrap();
    assert!(timing["wall_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn assert_only_changes_the_exit_code() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"thresholds": {"gateaux_ratio": 1e-9}}"#);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let mut plain = vec!["check-gateaux", "--config", &cfg, "--out", a.to_str().unwrap()];
    plain.extend(SMALL);
    assert_eq!(call(&plain), EXIT_OK);
    let mut strict = vec!["check-gateaux", "--config", &cfg, "--assert", "--out", b.to_str().unwrap()];
    strict.extend(SMALL);
    assert_eq!(call(&strict), EXIT_ASSERT);
    let ra = std::fs::read(a.join("check-gateaux.report.json")).unwrap();
    let rb = std::fs::read(b.join("check-gateaux.report.json")).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(read_report(&b, "check-gateaux")["passed"], false);
}

#[test]
fn reruns_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out = d.path().join(k.to_string());
        let mut args = vec!["optimize", "--threads", threads, "--out", out.to_str().unwrap()];
        args.extend(SMALL);
        assert_eq!(call(&args), EXIT_OK);
        reports.push(std::fs::read(out.join("optimize.report.json")).unwrap());
        assert!(out.join("optimize.history.csv").exists());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn optimizer_history_csv_has_the_documented_header() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let mut args = vec!["reproduce-example42", "--out", out];
    args.extend(SMALL);
    assert_eq!(call(&args), EXIT_OK);
    let csv = std::fs::read_to_string(d.path().join("reproduce-example42.history.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iter,J,Feps,agg_gap,sup_gap,step"));
    assert!(lines.count() >= 1);
}

#[test]
fn backward_csv_dump_on_request() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"csv": true, "terminal": "control"}"#);
    let out = d.path().to_str().unwrap();
    let mut args = vec!["solve-backward", "--config", &cfg, "--out", out];
    args.extend(SMALL);
    assert_eq!(call(&args), EXIT_OK);
    let csv = std::fs::read_to_string(d.path().join("solve-backward.y.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("path,node,coord,value"));
    assert_eq!(csv.lines().count(), 500 * 9 + 1);
}
