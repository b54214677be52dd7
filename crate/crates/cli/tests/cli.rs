use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const LIB: &str = "var i := 2; var j := 1;\ndef f() {\n  i := i + 2;\n  j := j + 2;\n}\n";
const SUITE: &str = "def test() {\n  f();\n  assert(i = 4 and j = 2);\n  f();\n  assert(i = 6 and j = 4);\n}\n";
const PATCHES: &str = r#"[
  {"id": "P1", "edits": [{"location": "f:0", "replacement": "i := i * 2;"}]},
  {"id": "P2", "edits": [{"location": "f:0", "replacement": "i := j + 3;"}]},
  {"id": "P3", "edits": [{"location": "f:1", "replacement": "j := j * 2;"}]},
  {"id": "P4", "edits": [{"location": "f:1", "replacement": "j := i - 2;"}]},
  {"id": "P5", "edits": [{"location": "f:1", "replacement": "j := 2;"}]}
]"#;

fn project(dir: &Path) -> std::path::PathBuf {
    fs::write(dir.join("lib.imp"), LIB).unwrap();
    fs::write(dir.join("suite.imp"), SUITE).unwrap();
    fs::write(dir.join("patches.json"), PATCHES).unwrap();
    let manifest = r#"{"sources": ["lib.imp", "suite.imp"],
        "tests": [{"name": "test", "entry": "test", "failing": true}],
        "patchSets": ["patches.json"]}"#;
    let path = dir.join("project.json");
    fs::write(&path, manifest).unwrap();
    path
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchsched")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn statuses(report: &Value) -> Vec<String> {
    report["verdicts"].as_array().unwrap().iter().map(|v| v["status"].as_str().unwrap().to_string()).collect()
}

const GOLDEN: [&str; 5] = ["implausible", "implausible", "plausible", "plausible", "implausible"];

#[test]
fn validate_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = project(dir.path());
    let out = cli(&["validate", m.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    assert_eq!(statuses(&r), GOLDEN);
    assert_eq!(r["patchSets"][0]["counters"]["rounds"], 3);
    assert_eq!(r["patchSets"][0]["counters"]["parseCount"], 1);
}

#[test]
fn disable_and_compare_plain() {
    let dir = tempfile::tempdir().unwrap();
    let m = project(dir.path());
    let out = cli(&["validate", m.to_str().unwrap(), "--disable", "dedup,virtualization", "--compare-plain", "--workers", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["patchSets"][0]["counters"]["testExecutions"], 5);
    assert_eq!(r["aggregate"]["verdictDiff"], Value::Array(vec![]));
    assert!(r["aggregate"]["plainOracleSteps"].as_u64().unwrap() > 0);
}

#[test]
fn report_file_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let m = project(dir.path());
    let json_path = dir.path().join("out.json");
    let csv_path = dir.path().join("out.csv");
    assert!(cli(&["validate", m.to_str().unwrap(), "--report", json_path.to_str().unwrap()]).status.success());
    assert!(cli(&["plain", m.to_str().unwrap(), "--report", csv_path.to_str().unwrap()]).status.success());
    let r: Value = serde_json::from_str(&fs::read_to_string(json_path).unwrap()).unwrap();
    assert_eq!(statuses(&r), GOLDEN);
    let csv = fs::read_to_string(csv_path).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn dumps_go_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let m = project(dir.path());
    let out = cli(&["validate", m.to_str().unwrap(), "--dump-tree", "--dump-woven"]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("test-finished"));
    assert!(err.contains("$selected_patch"));
    json(&out);
}

#[test]
fn ablate_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let m = project(dir.path());
    let out = cli(&["ablate", m.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cfg in ["full", "-dedup", "-dedup-virt", "-prioritization", "-schemata"] {
        assert!(text.lines().any(|l| l.starts_with(cfg)), "{cfg} missing");
    }
}

#[test]
fn list_locations_prints_paths() {
    let dir = tempfile::tempdir().unwrap();
    project(dir.path());
    let out = cli(&["list-locations", dir.path().join("lib.imp").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let locs: Vec<_> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(locs, ["f:0", "f:1"]);
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(cli(&["validate", missing.to_str().unwrap()]).status.code(), Some(2));
    let broken = dir.path().join("broken.imp");
    fs::write(&broken, "def f( {").unwrap();
    assert_eq!(cli(&["list-locations", broken.to_str().unwrap()]).status.code(), Some(2));
    let m = project(dir.path());
    assert_eq!(cli(&["validate", m.to_str().unwrap(), "--workers", "0"]).status.code(), Some(2));
    assert_eq!(cli(&["validate", m.to_str().unwrap(), "--step-budget-factor", "-1"]).status.code(), Some(2));
}
