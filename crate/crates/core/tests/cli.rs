use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn policylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_policylab")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    policylab(args).status.code().unwrap()
}

fn config(name: &str) -> String {
    fixtures().join("configs").join(format!("{name}.json")).display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["fit", "--no-such-flag"]), 2);
    assert_eq!(code(&["--help"]), 0);
    let out = tempfile::tempdir().unwrap();
    // --frac only means something to steer
    assert_eq!(code(&["fit", "--config", &config("fit"), "--frac", "0.5", "--out", out.path().to_str().unwrap()]), 2);
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fit.json");
    let input = fixtures().join("sweep_synthetic.csv");
    fs::write(&cfg, format!(r#"{{"schema_version": 1, "input": {:?}, "inptu": 3}}"#, input.display().to_string())).unwrap();
    let out = policylab(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inptu"));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(code(&["fit", "--input", "/nonexistent/sweep.csv", "--out", out]), 3);
    assert_eq!(code(&["analyze", "--trace", "/nonexistent/a.pltr", "--out", out]), 3);
    assert_eq!(code(&["fit", "--config", "/nonexistent/cfg.json", "--out", out]), 3);
}

#[test]
fn fit_prints_coefficients_and_manifest_hashes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = policylab(&["fit", "--config", &config("fit"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let a: f64 = stdout.lines().find_map(|l| l.strip_prefix("a = ")).unwrap().parse().unwrap();
    assert!((a - 0.5).abs() < 1e-9);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "fit");
    assert_eq!(manifest["passed"], true);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for f in outputs {
        let bytes = fs::read(dir.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn report_rerenders_figures() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&["analyze", "--config", &config("analyze"), "--out", run.to_str().unwrap(), "--format", "json", "--format", "svg"]), 0);
    let report = dir.path().join("report");
    assert_eq!(code(&["report", "--input", run.to_str().unwrap(), "--out", report.to_str().unwrap()]), 0);
    let svgs: Vec<_> = fs::read_dir(&report)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert!(!svgs.is_empty());
    assert_eq!(code(&["report", "--input", dir.path().join("nope").to_str().unwrap(), "--out", report.to_str().unwrap()]), 3);
}
