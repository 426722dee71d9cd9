use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn cutlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cutlab")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    cutlab(args).status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&["--preset", "nope"]), 2);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["--preset", "density", "--horizons", "10,5"]), 2);
    assert_eq!(code(&["--preset", "density", "--workers", "0"]), 2);
}

#[test]
fn list_profiles() {
    let out = cutlab(&["--list-profiles"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sqrt_log") && text.contains("poly"));
}

#[test]
fn identity_audit_passes_and_emits_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&["--preset", "identity-audit", "--out", out.to_str().unwrap()]), 0);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["pass"], true);
    assert!(summary["config"].get("workers").is_none());
    assert!(out.join("config.json").exists());
    assert!(out.join("greens_0.csv").exists());
}

#[test]
fn emitted_config_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let args = ["--preset", "visits-geometric", "--seeds", "500", "--workers", "2", "--out"];
    let mut a = args.to_vec();
    a.push(first.to_str().unwrap());
    assert_eq!(code(&a), 0);
    let second = dir.path().join("second");
    let cfg = first.join("config.json");
    assert_eq!(
        code(&["--config", cfg.to_str().unwrap(), "--workers", "1", "--out", second.to_str().unwrap()]),
        0
    );
    let a = std::fs::read(first.join("summary.json")).unwrap();
    let b = std::fs::read(second.join("summary.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"preset":"density","seeds":1,"master_seed":1,"bogus":3}"#).unwrap();
    assert_eq!(code(&["--config", bad.to_str().unwrap()]), 2);
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"preset":"nope","seeds":1,"master_seed":1}"#).unwrap();
    assert_eq!(code(&["--config", unknown.to_str().unwrap()]), 2);
    let ok = dir.path().join("ok.json");
    std::fs::write(&ok, r#"{"preset":"density","seeds":1,"master_seed":1}"#).unwrap();
    assert_eq!(code(&["--config", ok.to_str().unwrap(), "--preset", "sandwich"]), 2);
}

#[test]
fn unmet_criteria_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("short");
    // one step never completes a scale, so no scale is audited
    assert_eq!(
        code(&["--preset", "density", "--horizons", "1", "--seeds", "3", "--out", out.to_str().unwrap()]),
        1
    );
    assert_eq!(read_json(&out.join("summary.json"))["pass"], false);
}

#[test]
fn killing_flags_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vc");
    let _ = code(&[
        "--preset", "vc-audit", "--gamma", "2.5", "--origin", "1", "--r", "1.5", "--out",
        out.to_str().unwrap(),
    ]);
    let cfg = read_json(&out.join("config.json"));
    assert_eq!(cfg["killing"]["gamma"], 2.5);
    assert_eq!(cfg["killing"]["origin"], 1);
    assert_eq!(cfg["killing"]["r"], 1.5);
}
