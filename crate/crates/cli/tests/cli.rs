use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_garch-dpd"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1, "stdout: {stdout}");
    serde_json::from_str(stdout.trim()).expect("stdout is one JSON line")
}

fn simulate(dir: &Path, n: &str, seed: &str) {
    let out = run(dir, &["simulate", "--theta", "1,0.2,0.4", "--n", n, "--seed", seed, "--out", "sim.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["simulate", "--theta", "1,0.2,0.4", "--n", "500", "--seed", "7", "--out", "sim.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["command"], "simulate");
    assert_eq!(s["result"]["n"], 500);
    let text = std::fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    assert_eq!(text.lines().count(), 501);
    assert_eq!(text.lines().next(), Some("t,return"));

    let again = run(dir.path(), &["simulate", "--theta", "1,0.2,0.4", "--n", "500", "--seed", "7", "--out", "b.csv"]);
    assert_eq!(summary(&again)["config_hash"].as_str().map(str::len), Some(64));
    let b = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(text, b);
}

#[test]
fn config_hash_tracks_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "200", "1");
    let h = |seed: &str| {
        let out = run(dir.path(), &["fit", "--data", "sim.csv", "--method", "mdpde", "--gamma", "0.2", "--seed", seed]);
        summary(&out)["config_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(h("3"), h("3"));
    assert_ne!(h("3"), h("4"));
}

#[test]
fn fit_mdpde_reports_estimate_and_standard_errors() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "500", "7");
    let out = run(dir.path(), &["fit", "--data", "sim.csv", "--gamma", "0.2", "--method", "mdpde", "--out-dir", "res"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    let est = s["result"]["estimate"].as_array().unwrap();
    let se = s["result"]["std_errors"].as_array().unwrap();
    assert_eq!(est.len(), 3);
    assert_eq!(se.len(), 3);
    assert!(se.iter().all(|v| v.as_f64().unwrap() > 0.0));
    let saved: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/fit.json")).unwrap()).unwrap();
    assert_eq!(saved["estimate"]["alpha"].as_array().unwrap().len(), 1);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(1));
    simulate(dir.path(), "100", "1");
    let out = run(dir.path(), &["fit", "--data", "sim.csv", "--method", "edpe"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["fit", "--data", "missing.csv", "--method", "mdpde", "--gamma", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["status"], "error");
    assert!(err["kind"].is_string() && err["message"].is_string());

    std::fs::write(dir.path().join("p.csv"), "date,close\n2024-01-01,100\n2024-01-02,-5\n").unwrap();
    let out = run(dir.path(), &["diagnose", "--data", "p.csv", "--prices"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["kind"], "ingestion");
    assert!(err["message"].as_str().unwrap().contains("row 2"));
}

#[test]
fn sample_then_diagnose_draws() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "300", "5");
    let out = run(
        dir.path(),
        &[
            "sample",
            "--data",
            "sim.csv",
            "--method",
            "edpe",
            "--gamma",
            "0.2",
            "--chains",
            "2",
            "--warmup",
            "100",
            "--samples",
            "100",
            "--leapfrog-steps",
            "8",
            "--out-dir",
            "o",
            "--threads",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["result"]["posterior_mean"].as_array().unwrap().len(), 3);
    let draws = std::fs::read_to_string(dir.path().join("o/draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 201);

    let out = run(dir.path(), &["diagnose", "--draws", "o/draws.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["result"]["rhat"].as_array().unwrap().len(), 3);
}

#[test]
fn forecast_backtest_and_gamma_selection() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "400", "9");
    let out = run(dir.path(), &["forecast", "--data", "sim.csv", "--method", "mdpde", "--gamma", "0.1"]);
    let s = summary(&out);
    assert!(s["result"]["sigma2_hat"].as_f64().unwrap() > 0.0);
    assert!(s["result"]["var_hat"].as_f64().unwrap() < 0.0);

    let out = run(
        dir.path(),
        &[
            "backtest",
            "--data",
            "sim.csv",
            "--method",
            "mdpde",
            "--gamma",
            "0.1",
            "--split",
            "350",
            "--refit-every",
            "10",
            "--out-dir",
            "bt",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&out)["result"]["points"], 50);
    let csv = std::fs::read_to_string(dir.path().join("bt/forecasts.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,return,sigma2_hat,var_hat,violated"));
    assert_eq!(csv.lines().count(), 51);

    let out = run(
        dir.path(),
        &[
            "select-gamma",
            "--data",
            "sim.csv",
            "--grid",
            "0,0.2",
            "--family",
            "mdpde",
            "--split",
            "350",
            "--refit-every",
            "25",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["result"]["table"].as_array().unwrap().len(), 2);
}

#[test]
fn run_config_drives_a_simulated_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "simulation": {"theta": {"omega": 1.0, "alpha": [0.2], "beta": [0.4]}, "n": 300},
        "gamma": 0.3,
        "seed": 11
    }"#;
    std::fs::write(dir.path().join("run.json"), cfg).unwrap();
    let out = run(dir.path(), &["fit", "--config", "run.json", "--method", "mdpde"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["seed"], 11);
    assert_eq!(s["result"]["method"], "MDPDE(0.3)");
}

#[test]
fn mc_study_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let study = r#"{
        "theta_true": {"omega": 1.0, "alpha": [0.2], "beta": [0.4]},
        "n": 300,
        "replications": 2,
        "gamma_grid": [0.0, 0.2],
        "baselines": [{"kind": "eope_t", "nu": 5.0}],
        "settings": {"sampler": {"n_chains": 2, "warmup": 100, "samples": 100, "leapfrog_steps": 8}}
    }"#;
    std::fs::write(dir.path().join("study.json"), study).unwrap();
    let start = Instant::now();
    let out = run(dir.path(), &["mc-study", "--config", "study.json", "--out-dir", "mc", "--seed", "3"]);
    assert!(start.elapsed() < Duration::from_secs(60));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["result"]["completed"], 2);
    let md = std::fs::read_to_string(dir.path().join("mc/table.md")).unwrap();
    assert!(md.starts_with("| | EOPE | EDPE(0.2) | EOPE_t(5) |"));
    assert!(dir.path().join("mc/table.csv").exists());
    assert!(dir.path().join("mc/study.json").exists());
}

#[test]
fn configured_order_reaches_the_mdpde_fit() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "400", "2");
    std::fs::write(dir.path().join("run.json"), r#"{"order": {"p": 2, "q": 1}}"#).unwrap();
    let out =
        run(dir.path(), &["fit", "--config", "run.json", "--data", "sim.csv", "--method", "mdpde", "--gamma", "0.1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&out)["result"]["estimate"].as_array().unwrap().len(), 4);
    let out = run(dir.path(), &["fit", "--config", "run.json", "--data", "sim.csv", "--method", "eope"]);
    assert_eq!(out.status.code(), Some(1));
}
