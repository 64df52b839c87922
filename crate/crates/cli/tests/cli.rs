//! End-to-end runs of the `emcoop` binary.

use std::path::Path;
use std::process::{Command, Output};

fn emcoop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emcoop")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--env", "craftlite", "--difficulty", "hard", "--agents", "3", "--max-steps", "30", "--out", out];
    args.extend_from_slice(extra);
    emcoop(&args)
}

#[test]
fn run_then_recompute_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), &["--topology", "centralized", "--backend", "scripted:oracle-coordinator", "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let printed: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(printed["steps"], 30);

    let trace = dir.path().join("trace.jsonl");
    let m = emcoop(&["metrics", trace.to_str().unwrap()]);
    assert!(m.status.success());
    let recomputed: serde_json::Value = serde_json::from_str(&stdout(&m)).unwrap();
    assert_eq!(recomputed, printed);

    let csv = emcoop(&["metrics", trace.to_str().unwrap(), "--csv"]);
    assert!(stdout(&csv).lines().next().unwrap().contains("M18"));
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.yaml");
    std::fs::write(&cfg, "env: cube\ndifficulty: easy\nn_agents: 2\ntopology: {kind: debate}\nbackend: scripted:idler\nseed: 1\nmax_steps: 5\n").unwrap();
    let o = emcoop(&["run", "--config", cfg.to_str().unwrap(), "--max-steps", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["steps"], 7);
}

#[test]
fn validate_reports_bad_configs_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"env": "cube", "difficulty": "auto", "n_agents": 3, "topology": {"kind": "decentralized", "budget": 2}, "backend": "scripted:random-walker"}"#).unwrap();
    let o = emcoop(&["validate", good.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "ok");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"env": "craftlite", "difficulty": "auto", "n_agents": 3, "topology": {"kind": "debate"}, "backend": "scripted:idler"}"#).unwrap();
    let o = emcoop(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let o = emcoop(&["run", "--agents", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn attribute_failed_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for seed in ["0", "1"] {
        let sub = dir.path().join(seed);
        let o = run_into(&sub, &["--backend", "scripted:greedy-collector", "--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        traces.push(sub.join("trace.jsonl").to_str().unwrap().to_string());
    }
    let mut args = vec!["attribute", "--k", "2"];
    args.extend(traces.iter().map(String::as_str));
    let o = emcoop(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report.is_object());
}

#[test]
fn missing_trace_fails_cleanly() {
    let o = emcoop(&["metrics", "/nonexistent/trace.jsonl"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
