use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gpbas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpbas"))
        .args(args)
        .env("GPBAS_OUTPUT_ROOT", dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to run gpbas")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_environment_lists_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpbas(tmp.path(), &["gen-data", "--env", "unknown"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for name in ["linear", "dubins", "quadrotor"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn zero_horizon_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpbas(tmp.path(), &["lqr", "--env", "linear", "--horizon", "0", "--dynamics", "true"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"environment": "linear", "solver": {"horizn": 10}}"#).unwrap();
    let o = gpbas(tmp.path(), &["export", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizn"));
}

#[test]
fn empty_or_mismatched_dataset_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "x1,x2,u,dx1,dx2\n").unwrap();
    let o = gpbas(tmp.path(), &["train", "--env", "linear", "--data", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let wrong = tmp.path().join("wrong.csv");
    fs::write(&wrong, "a,b\n1,2\n").unwrap();
    let o = gpbas(tmp.path(), &["train", "--env", "linear", "--data", wrong.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("header"));

    let missing = gpbas(tmp.path(), &["train", "--env", "linear", "--data", "/nonexistent/data.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("/nonexistent/data.csv"));
}

#[test]
fn gen_data_writes_125_rows_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let o = gpbas(tmp.path(), &["gen-data", "--env", "linear", "--seed", "7", "--output-dir", dir]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read_to_string(tmp.path().join("a/dataset.csv")).unwrap();
    assert_eq!(a.lines().count(), 126);
    assert!(a.starts_with("x1,x2,u,dx1,dx2\n"));
    assert_eq!(a, fs::read_to_string(tmp.path().join("b/dataset.csv")).unwrap());
    let prov: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("a/dataset.json")).unwrap()).unwrap();
    assert_eq!(prov["rows"], 125);
    assert_eq!(prov["seed"], 7);
    assert_eq!(prov["environment"], "linear");
}

#[test]
fn export_writes_schema_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpbas(tmp.path(), &["export", "--env", "dubins", "--course", "multi", "--rho", "0.9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    assert_eq!(fs::read_to_string(out.join("experiment_config.schema.json")).unwrap(), gpbas_cli::config::SCHEMA);
    let cfg: gpbas_cli::config::ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg.course.as_deref(), Some("multi"));
    assert_eq!(cfg.barrier.rho, Some(0.9));
    // The exported config loads back as a config file.
    let again = gpbas(tmp.path(), &["export", "--config", out.join("config.json").to_str().unwrap(), "--output-dir", "again"]);
    assert!(again.status.success());
    assert_eq!(
        fs::read(out.join("config.json")).unwrap(),
        fs::read(tmp.path().join("again/config.json"))
            .map(|b| String::from_utf8(b).unwrap().replace("\"again\"", "\"out\"").into_bytes())
            .unwrap()
    );
}

#[test]
fn unconverged_ddp_still_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpbas(
        tmp.path(),
        &["ddp", "--env", "linear", "--dynamics", "true", "--horizon", "60", "--max-iters", "1"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in ["ddp_trajectory.csv", "ddp_trajectory_true.csv", "ddp_metrics.json", "ddp_policy.json", "ddp_cost_history.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ddp_metrics.json")).unwrap()).unwrap();
    assert_eq!(m["converged"], false);
    assert!(m.get("wall_time_s").is_none());
}

#[test]
fn simulate_replays_a_saved_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpbas(tmp.path(), &["lqr", "--env", "linear", "--dynamics", "true"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let policy = tmp.path().join("out/lqr_policy.json");
    let o = gpbas(tmp.path(), &["simulate", "--env", "linear", "--policy", policy.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sim = fs::read_to_string(tmp.path().join("out/simulate_trajectory.csv")).unwrap();
    let lqr = fs::read_to_string(tmp.path().join("out/lqr_trajectory_true.csv")).unwrap();
    assert_eq!(sim, lqr);
    // A policy for another environment is refused.
    let o = gpbas(tmp.path(), &["simulate", "--env", "dubins", "--policy", policy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
