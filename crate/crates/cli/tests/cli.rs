//! End-to-end tests of the command-line interface through the built binary.

use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_metatree")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn gen_knapsack(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("kp_{seed}.json"));
    run_ok(&[
        "generate",
        "knapsack",
        "--items",
        "8",
        "--categories",
        "2",
        "--scenarios",
        "4",
        "--seed",
        seed,
        "--out",
        &path_str(&out),
    ]);
    out
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_knapsack(dir.path(), "7");
    let b = dir.path().join("again.json");
    run_ok(&[
        "generate",
        "knapsack",
        "--items",
        "8",
        "--categories",
        "2",
        "--scenarios",
        "4",
        "--seed",
        "7",
        "--out",
        &path_str(&b),
    ]);
    assert_eq!(
        std::fs::read_to_string(&a).unwrap(),
        std::fs::read_to_string(&b).unwrap()
    );
}

#[test]
fn generate_grid_rejects_bad_districts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate",
        "grid",
        "--size",
        "9",
        "--districts",
        "4",
        "--graph-out",
        &path_str(&dir.path().join("g.json")),
        "--scenarios-out",
        &path_str(&dir.path().join("s.csv")),
    ]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2), "usage errors exit with 2");
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[usage]"));
}

#[test]
fn train_writes_valid_tree_json() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_knapsack(dir.path(), "11");
    let tree = dir.path().join("lh2.json");
    run_ok(&[
        "train",
        "--instance",
        &path_str(&inst),
        "--method",
        "lh2",
        "--out",
        &path_str(&tree),
    ]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&tree).unwrap()).unwrap();
    assert_eq!(doc["method"], "LH2");
    let depth = doc["tree"]["depth"].as_u64().unwrap();
    let leaves = doc["tree"]["leaves"].as_array().unwrap().len() as u64;
    assert_eq!(leaves, 1 << depth);
    assert!(doc["tree"]["queries"].is_array());
}

#[test]
fn mip1_equals_meta1() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_knapsack(dir.path(), "13");
    let a = dir.path().join("mip1.json");
    let b = dir.path().join("meta1.json");
    run_ok(&[
        "train",
        "--instance",
        &path_str(&inst),
        "--method",
        "mip1",
        "--out",
        &path_str(&a),
    ]);
    run_ok(&[
        "train",
        "--instance",
        &path_str(&inst),
        "--method",
        "meta1",
        "--out",
        &path_str(&b),
    ]);
    let da: Value = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    let db: Value = serde_json::from_str(&std::fs::read_to_string(&b).unwrap()).unwrap();
    let (oa, ob) = (
        da["objective_train"].as_f64().unwrap(),
        db["objective_train"].as_f64().unwrap(),
    );
    assert!((oa - ob).abs() < 1e-9, "mip1 {oa} vs meta1 {ob}");
}

#[test]
fn time_limited_mip_records_feasible_status() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("big.json");
    run_ok(&[
        "generate",
        "knapsack",
        "--items",
        "16",
        "--categories",
        "4",
        "--scenarios",
        "10",
        "--seed",
        "3",
        "--out",
        &path_str(&inst),
    ]);
    let tree = dir.path().join("mip2.json");
    run_ok(&[
        "train",
        "--instance",
        &path_str(&inst),
        "--method",
        "mip2",
        "--time-limit",
        "2",
        "--out",
        &path_str(&tree),
    ]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&tree).unwrap()).unwrap();
    assert_eq!(
        doc["status"], "feasible",
        "a 2 s budget cannot prove optimality here"
    );
    assert!(doc["objective_train"].as_f64().is_some());
}

#[test]
fn evaluate_matches_training_objective() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_knapsack(dir.path(), "17");
    let tree = dir.path().join("meta1.json");
    run_ok(&[
        "train",
        "--instance",
        &path_str(&inst),
        "--method",
        "meta1",
        "--out",
        &path_str(&tree),
    ]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&tree).unwrap()).unwrap();
    let trained = doc["objective_train"].as_f64().unwrap();

    let csv_path = dir.path().join("eval.csv");
    run_ok(&[
        "evaluate",
        "--instance",
        &path_str(&inst),
        "--tree",
        &path_str(&tree),
        "--out",
        &path_str(&csv_path),
    ]);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let row = text.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    let raw: f64 = cols[7].parse().unwrap();
    assert!(
        (raw - trained).abs() < 1e-9,
        "evaluate {raw} vs train {trained}"
    );
    // Scaled column present when anchors are computed.
    assert!(!cols[8].is_empty());
}

#[test]
fn evaluate_no_anchors_is_raw_only() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_knapsack(dir.path(), "19");
    let tree = dir.path().join("lh2.json");
    run_ok(&[
        "train",
        "--instance",
        &path_str(&inst),
        "--method",
        "lh2",
        "--out",
        &path_str(&tree),
    ]);
    let csv_path = dir.path().join("eval.csv");
    let out = run_ok(&[
        "evaluate",
        "--instance",
        &path_str(&inst),
        "--tree",
        &path_str(&tree),
        "--no-anchors",
        "--out",
        &path_str(&csv_path),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let cols: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert!(!cols[7].is_empty(), "raw objective present");
    assert!(cols[8].is_empty(), "scaled objective empty without anchors");
}

#[test]
fn bench_restricts_method_columns_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("bench.csv");
    let base = [
        "bench",
        "--problem",
        "knapsack",
        "--items",
        "6",
        "--features",
        "2",
        "--scenarios",
        "3",
        "--test-scenarios",
        "4",
        "--methods",
        "lh2,meta1,micro1,opt",
        "--seed",
        "5",
        "--time-limit",
        "30",
    ];
    let mut one = base.to_vec();
    one.extend(["--runs", "1", "--out", path_str(&out_csv).leak()]);
    run_ok(&one);
    let first = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(
        first.lines().count(),
        1 + 4,
        "header plus one row per method"
    );
    assert!(first.contains("LH2") && first.contains("META1"));
    assert!(!first.contains("MIP2"), "unselected methods are absent");

    // Resume with two runs: run 0 is kept, run 1 appended.
    let mut two = base.to_vec();
    two.extend([
        "--runs",
        "2",
        "--resume",
        "--out",
        path_str(&out_csv).leak(),
    ]);
    run_ok(&two);
    let merged = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(merged.lines().count(), 1 + 8);
    for line in first.lines().skip(1) {
        // Completed rows survive the resume byte for byte (timing included,
        // since they are not re-run).
        assert!(merged.contains(line), "resumed output lost row {line:?}");
    }
}

#[test]
fn bench_preset_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("preset.csv");
    // The preset defines the protocol; shrink the run count for a smoke run.
    run_ok(&[
        "bench",
        "--preset",
        "table2-row",
        "--runs",
        "1",
        "--grid-size",
        "6",
        "--features",
        "9",
        "--test-scenarios",
        "2",
        "--time-limit",
        "15",
        "--methods",
        "lh2,m2m2,micro1,opt",
        "--out",
        &path_str(&out_csv),
    ]);
    let text = std::fs::read_to_string(&out_csv).unwrap();
    assert!(text.contains("grid"));
    assert!(text.contains("LH2"));
}

#[test]
fn missing_file_exits_with_io_code() {
    let out = run(&[
        "train",
        "--instance",
        "/nonexistent/path.json",
        "--method",
        "lh2",
        "--out",
        "/tmp/x.json",
    ]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[io]"));
}
