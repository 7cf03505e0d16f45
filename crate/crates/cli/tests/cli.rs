//! Exit-code and artifact checks for the command-line front end.

use std::path::Path;
use std::process::Command;

fn zimed() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zimed"))
}

fn repo_data() -> String {
    format!("{}/../../data/synthetic.csv", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn missing_seed_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let status = zimed()
        .args([
            "mediate",
            "--input",
            &repo_data(),
            "--family",
            "zinb",
            "--out",
            out.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&status.stderr);
    assert!(msg.contains("seed"), "stderr: {msg}");
}

#[test]
fn malformed_csv_is_a_data_error() {
    let out = tempfile::tempdir().unwrap();
    let bad = out.path().join("bad.csv");
    std::fs::write(&bad, "id,exposure,outcome\n0,1\n").unwrap();
    let status = zimed()
        .args([
            "fit",
            "--input",
            bad.to_str().unwrap(),
            "--family",
            "zinb",
            "--out",
            out.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let out = tempfile::tempdir().unwrap();
    let status = zimed()
        .args([
            "fit",
            "--input",
            "/nonexistent/nowhere.csv",
            "--family",
            "zinb",
            "--out",
            out.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(5));
}

#[test]
fn fit_writes_models_and_summaries() {
    let out = tempfile::tempdir().unwrap();
    let status = zimed()
        .args([
            "fit",
            "--input",
            &repo_data(),
            "--family",
            "zinb",
            "--out",
            out.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&status.stderr));
    for artifact in ["fit.json", "summary.csv", "depth.csv"] {
        assert!(
            Path::new(out.path()).join(artifact).is_file(),
            "missing {artifact}"
        );
    }
}
