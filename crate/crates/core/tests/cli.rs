use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mac_jscc::sweep::{from_csv, revalidate_hybrid_point, Curve, HybridPoint};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mac-jscc"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn outer_unit_pair_is_member() {
    let out = run(&["outer", "--d1", "1", "--d2", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["verdict"]["member"], true);
}

#[test]
fn outer_tiny_distortion_fails_first_constraint() {
    let out = run(&["outer", "--d1", "1e-6", "--d2", "1e-6", "--power", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["verdict"]["violated_constraint"], "first");
}

#[test]
fn zero_budget_finds_nothing() {
    let out = run(&["inner-hybrid", "--d1", "0.9", "--d2", "0.9", "--budget", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["found"], false);
}

#[test]
fn malformed_json_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"problem\": ");
    for cmd in ["sweep", "inner-hybrid", "outer", "discrete-certify", "capacity-cm"] {
        let out = run(&[cmd, "--config", &bad]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
    }
}

#[test]
fn unknown_keys_and_invalid_problems_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "typo.json", r#"{"d1": 0.5, "d2": 0.5, "problm": {}}"#);
    assert_eq!(run(&["outer", "--config", &typo]).status.code(), Some(2));
    let bad = write(dir.path(), "bad.json", r#"{"problem": {"rho01": 0.9, "rho02": -0.9, "rho12": 0.9, "p1": 1, "p2": 1}}"#);
    assert_eq!(run(&["inner-uncoded", "--config", &bad]).status.code(), Some(2));
    let empty = write(dir.path(), "empty.json", r#"{"curves": []}"#);
    assert_eq!(run(&["sweep", "--config", &empty]).status.code(), Some(2));
}

#[test]
fn single_point_sweep_has_one_row_per_curve_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let params = dir.path().join("params.json");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(configs().join("sweep_small.json"))
        .args(["--start", "10", "--points", "1", "--out"])
        .arg(&csv)
        .arg("--params-out")
        .arg(&params)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), Curve::ALL.len());
    assert!(rows.iter().all(|r| r.param_db == 10.0 && (r.param_linear - 10.0).abs() < 1e-12));

    let points: Vec<HybridPoint> = serde_json::from_str(&std::fs::read_to_string(&params).unwrap()).unwrap();
    assert_eq!(points.len(), 2);
    for p in &points {
        let row = rows.iter().find(|r| r.curve == p.curve).unwrap();
        let (d1, d2, feasible) = revalidate_hybrid_point(p).unwrap();
        assert!(feasible);
        assert!((d1 - row.d1).abs() < 1e-12 && (d2 - row.d2).abs() < 1e-12);
    }
}

#[test]
fn properties_replay_and_exit_status() {
    let a = run(&["properties", "--suite", "dpi", "--count", "40", "--seed", "9"]);
    let b = run(&["properties", "--suite", "dpi", "--count", "40", "--seed", "9"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["suites"][0]["report"]["violations"], 0);
    assert_eq!(run(&["properties", "--count", "0"]).status.code(), Some(2));
}

#[test]
fn capacity_point_membership_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let channel = r#"{"x1": ["0", "1"], "x2": ["0", "1"], "y": ["00", "01", "10", "11"],
        "table": [[[1, 0, 0, 0], [0, 1, 0, 0]], [[0, 0, 1, 0], [0, 0, 0, 1]]]}"#;
    let inside = write(dir.path(), "in.json", &format!(r#"{{"channel": {channel}, "grid": 2, "point": [0.5, 0.3, 0.3]}}"#));
    let outside = write(dir.path(), "out.json", &format!(r#"{{"channel": {channel}, "grid": 2, "point": [0.0, 0.9, 0.1]}}"#));
    assert_eq!(run(&["capacity-cm", "--config", &inside]).status.code(), Some(0));
    assert_eq!(run(&["capacity-cm", "--config", &outside]).status.code(), Some(1));
}

#[test]
fn discrete_commands_on_sample_configs() {
    let cfg = |n: &str| configs().join(n).to_string_lossy().into_owned();
    let out = run(&["discrete-certify", "--config", &cfg("certify_noiseless.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["revalidation"]["d1"], 0.0);
    assert_eq!(v["revalidation"]["d2"], 0.0);

    let out = run(&["discrete-certify", "--config", &cfg("slepian_wolf.json")]);
    assert_eq!(out.status.code(), Some(0));
    let margins = json(&out)["revalidation"]["margins"].clone();
    assert!(margins.as_array().unwrap().iter().all(|m| m.is_null() || m.as_f64().unwrap() > 0.0));

    let out = run(&["lossless-check", "--config", &cfg("lossless_adder.json")]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["common_part"]["size"], 2);

    assert_eq!(run(&["discrete-certify"]).status.code(), Some(2));
}

#[test]
fn correlation_of_block_source() {
    let out = run(&["correlation", "--config", &configs().join("correlation_block.json").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(0));
    let r = &json(&out)["report"];
    // a shared block index makes the maximal correlation one
    assert!((r["maximal"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let pearson = r["pearson"].as_f64().unwrap();
    assert!(pearson <= r["ratio_12"].as_f64().unwrap() + 1e-12);
}

#[test]
fn simulate_agrees_with_closed_form() {
    let out = run(&["simulate", "--config", &configs().join("simulate.json").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["agree"], true);
}

#[test]
fn out_flag_writes_the_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u.json");
    let stdout = run(&["inner-uncoded", "--power", "2"]).stdout;
    let status = bin().args(["inner-uncoded", "--power", "2", "--out"]).arg(&file).status().unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read(&file).unwrap(), stdout);
}
