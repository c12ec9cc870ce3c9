use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn instab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_instab")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is json")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn schedule_starts_from_the_budget() {
    let o = instab(&["schedule", "--sigma", "log2", "--r", "1/8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["heights"][1]["index"], -1);
    assert_eq!(v["heights"][1]["h"], 32768);
    assert!(v["inequality"].as_array().unwrap().iter().all(|b| b == true));
}

#[test]
fn toy_schedule_is_tagged() {
    let v = json(&instab(&["schedule", "--toy", "3,4,5"]));
    assert_eq!(v["toy"], true);
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(code(&instab(&["schedule", "--r", "1/x"])), 2);
    assert_eq!(code(&instab(&["schedule", "--r", "1/3"])), 2);
    assert_eq!(code(&instab(&["construct", "--folds", "0"])), 2);
    assert_eq!(code(&instab(&["orbit", "--x", "3/2"])), 2);
    assert_eq!(code(&instab(&["frobnicate"])), 2);
}

#[test]
fn flat_sigma_is_a_computation_error() {
    let o = instab(&["schedule", "--sigma", "const:3"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma"));
}

#[test]
fn narrow_folds_fail_the_width_check() {
    let o = instab(&["build", "--folds", "2", "--stages", "1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("R_1 = 2"));
}

#[test]
fn construct_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&instab(&["construct", "--out", path(&a)])), 0);
    assert_eq!(code(&instab(&["construct", "--out", path(&b)])), 0);
    let ma = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.json")).unwrap());
    let m: Value = serde_json::from_slice(&ma).unwrap();
    let names: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert_eq!(names, ["checkpoints.csv", "deficiency.csv", "name.txt", "omega.txt", "trace.jsonl"]);
}

#[test]
fn lln_test_stays_within_bound() {
    let v = json(&instab(&["test", "lln", "--eps", "1/4", "--max-n", "20"]));
    assert_eq!(v["all_within_bound"], true);
    assert!(!v["blocks"].as_array().unwrap().is_empty());
}

#[test]
fn compress_follows_the_trace_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    let z = dir.path().join("z");
    assert_eq!(code(&instab(&["construct", "--out", path(&c)])), 0);
    let trace = c.join("trace.jsonl");
    let o = instab(&["compress", "--trace", path(&trace), "--margin", "1/20", "--out", path(&z)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let cps: Vec<String> = fs::read_to_string(c.join("checkpoints.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().to_string())
        .collect();
    let ns: Vec<String> = fs::read_to_string(z.join("ratio.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(ns, cps);
    let v: Value = serde_json::from_slice(&fs::read(z.join("compress.json")).unwrap()).unwrap();
    assert_eq!(v["gap"], "22/45");
}

#[test]
fn missed_margin_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    let z = dir.path().join("z");
    assert_eq!(code(&instab(&["construct", "--out", path(&c)])), 0);
    let trace = c.join("trace.jsonl");
    let o = instab(&["compress", "--trace", path(&trace), "--margin", "1", "--out", path(&z)]);
    assert_eq!(code(&o), 1);
    assert!(!z.exists() || fs::read_dir(&z).unwrap().next().is_none());
}

#[test]
fn report_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    assert_eq!(code(&instab(&["construct", "--out", path(&c)])), 0);
    let o = instab(&["report", path(&c)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("All 5 files match"));

    fs::write(c.join("omega.txt"), "1\n").unwrap();
    let o = instab(&["report", path(&c)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("omega.txt"));
}

#[test]
fn config_file_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "r = \"1/16\"\nk_max = 2\n").unwrap();
    let o = instab(&["--config", path(&cfg), "construct"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records: Vec<Value> =
        String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records[0]["config"]["r"], "1/16");
    assert_eq!(records[0]["config"]["k_max"], 2);
    assert_eq!(records.iter().filter(|r| r["record"] == "step").count(), 3);

    fs::write(&cfg, "radius = 3\n").unwrap();
    assert_eq!(code(&instab(&["--config", path(&cfg), "construct"])), 2);
}
