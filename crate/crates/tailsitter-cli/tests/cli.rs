use std::path::Path;
use std::process::{Command, Output};

use tailsitter_codesign::control::{ClosedLoopLog, LOG_CSV_VERSION};
use tailsitter_codesign::trajopt::CSV_VERSION;

fn tscd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tscd")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn geom_reports_baseline_and_is_repeatable() {
    let a = tscd(&["geom"]);
    let b = tscd(&["geom"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("S (m^2)") && l.ends_with("0.3150")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("b (m)") && l.ends_with("1.000")), "{text}");
}

#[test]
fn out_of_bounds_chord_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"design": {"c_sym": 2.0}}"#);
    let out = tscd(&["geom", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c_sym"));
}

#[test]
fn missing_seed_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tscd(&["trajopt", "--out", path(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"seeed": 1}"#);
    assert_eq!(tscd(&["geom", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn simulate_writes_versioned_closed_loop_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"missions": ["cruise"], "use_surrogate": false}"#);
    let run = tmp.path().join("run");
    let out = tscd(&["simulate", "--config", &cfg, "--seed", "3", "--out", path(&run), "--workers", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(run.join("closed_loop_cruise.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(LOG_CSV_VERSION));
    assert_eq!(lines.next().unwrap(), ClosedLoopLog::CSV_COLUMNS.join(","));
    assert!(lines.count() > 100);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["versions"]["closed_loop_csv"], LOG_CSV_VERSION);
    assert!(run.join("config.json").exists());
    assert!(run.join("path_cruise.svg").exists());
}

#[test]
fn run_directory_is_not_overwritten_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"missions": ["cruise"]}"#);
    let run = tmp.path().join("run");
    let args = ["trajopt", "--config", &cfg, "--seed", "1", "--out", path(&run)];
    assert!(tscd(&args).status.success());
    let csv = std::fs::read_to_string(run.join("trajectory_cruise.csv")).unwrap();
    assert!(csv.starts_with(CSV_VERSION));

    let again = tscd(&args);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    let forced: Vec<&str> = args.iter().copied().chain(["--force"]).collect();
    let out = tscd(&forced);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(run.join("trajectory_cruise.csv")).unwrap(), csv);
}

#[test]
fn infeasible_mission_exits_with_stage_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"design": {"c_sym": 0.8, "y_tip": 0.6}, "missions": ["turn"], "limits": {"t_max": 11.0}}"#);
    let run = tmp.path().join("run");
    let out = tscd(&["trajopt", "--config", &cfg, "--seed", "1", "--out", path(&run)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trim:") || err.contains("bc: turn:"), "{err}");
}

#[test]
fn small_codesign_run_writes_a_front() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "free": ["c_sym"],
            "missions": ["cruise"],
            "episodes": 2,
            "cdp": {"n_doe": 3, "max_iter": 1},
            "fcp": {"n_doe": 3, "max_iter": 0},
            "use_surrogate": false
        }"#,
    );
    let run = tmp.path().join("run");
    let out = tscd(&["codesign", "--config", &cfg, "--seed", "5", "--out", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert!(!summary["front"].as_array().unwrap().is_empty());
    let ledger = std::fs::read_to_string(run.join("ledger.jsonl")).unwrap();
    assert_eq!(ledger.lines().count() as u64, summary["evaluations"].as_u64().unwrap());
    assert!(run.join("front.svg").exists() && run.join("hypervolume.svg").exists());
}
