//! End-to-end tests of the `resboost` binary: exit codes, metrics
//! schemas, checkpoint/eval interplay, tree conversion, and the check
//! suite.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resboost"))
}

fn write_blobs_csv(dir: &Path) -> PathBuf {
    let path = dir.join("blobs.csv");
    let mut file = std::fs::File::create(&path).unwrap();
    writeln!(file, "x0,x1,class").unwrap();
    for i in 0..150 {
        let t = i as f64 * 0.37;
        let (cx, cy, label) = if i % 2 == 0 {
            (1.0, 1.0, "a")
        } else {
            (-1.0, -1.0, "b")
        };
        writeln!(
            file,
            "{:.6},{:.6},{label}",
            cx + 0.4 * t.sin(),
            cy + 0.4 * t.cos()
        )
        .unwrap();
    }
    path
}

fn train(dir: &Path, data: &Path, extra: &[&str]) -> (PathBuf, serde_json::Value, Output) {
    let ckpt = dir.join("model.ckpt");
    let mut cmd = binary();
    cmd.args([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--trees",
        "3",
        "--depth",
        "2",
        "--batch-size",
        "16",
        "--eta",
        "0.8",
        "--seed",
        "3",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    if !extra.contains(&"--epochs") {
        cmd.args(["--epochs", "20"]);
    }
    cmd.args(extra);
    let output = cmd.output().unwrap();
    assert!(
        output.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let metrics: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    (ckpt, metrics, output)
}

#[test]
fn train_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs_csv(dir.path());
    let (ckpt, metrics, _) = train(dir.path(), &data, &[]);
    assert!(ckpt.exists());
    assert_eq!(metrics["schema_version"], 1);
    assert_eq!(metrics["seed"], 3);
    assert_eq!(metrics["config"]["trees"], 3);
    assert_eq!(metrics["per_epoch_loss"].as_array().unwrap().len(), 20);
    assert!(metrics["train_acc"].as_f64().unwrap() > 0.9);
}

#[test]
fn zero_epochs_still_produces_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs_csv(dir.path());
    let (ckpt, metrics, _) = train(dir.path(), &data, &["--epochs", "0"]);
    assert!(ckpt.exists());
    assert_eq!(metrics["per_epoch_loss"].as_array().unwrap().len(), 0);
}

#[test]
fn vanilla_mode_reports_zero_shrinkage() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs_csv(dir.path());
    let (_, metrics, _) = train(dir.path(), &data, &["--mode", "vanilla"]);
    let theta = metrics["theta_final"].as_array().unwrap();
    assert_eq!(theta.len(), 3);
    assert!(theta.iter().all(|t| t.as_f64().unwrap() == 0.0));
}

#[test]
fn eval_matches_training_report_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs_csv(dir.path());
    let (ckpt, metrics, _) = train(dir.path(), &data, &[]);
    let eval = |out: Option<&Path>| -> Output {
        let mut cmd = binary();
        cmd.args([
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ]);
        if let Some(path) = out {
            cmd.args(["--out", path.to_str().unwrap()]);
        }
        cmd.output().unwrap()
    };
    let first = eval(None);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let report: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(report["accuracy"], metrics["test_acc"], "eval must reproduce the training report");
    let second = eval(None);
    assert_eq!(first.stdout, second.stdout, "eval output must be byte-identical");
    // confusion counts add up
    let confusion = report["confusion"].as_array().unwrap();
    let total: u64 = confusion
        .iter()
        .flat_map(|row| row.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, report["examples"].as_u64().unwrap());
}

#[test]
fn eval_rejects_width_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs_csv(dir.path());
    let (ckpt, _, _) = train(dir.path(), &data, &[]);
    // three feature columns instead of two
    let wide = dir.path().join("wide.csv");
    std::fs::write(&wide, "x0,x1,x2,class\n1,2,3,a\n4,5,6,b\n").unwrap();
    let output = binary()
        .args([
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            wide.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&output.stderr).contains("expects"),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn tree_spec_json() -> &'static str {
    r#"{
  "n_features": 2,
  "nodes": [
    {"id": 0, "feature_index": 0, "threshold": 0.0, "left": 1, "right": 2},
    {"id": 1, "feature_index": 1, "threshold": 0.25, "left": 3, "right": 4},
    {"id": 2, "feature_index": 1, "threshold": -0.5, "left": 5, "right": 6}
  ],
  "leaves": [
    {"id": 3, "value": [1.0, 0.0]},
    {"id": 4, "value": [0.0, 1.0]},
    {"id": 5, "value": [0.0, 1.0]},
    {"id": 6, "value": [1.0, 0.0]}
  ]
}"#
}

#[test]
fn convert_verifies_against_classical_evaluator() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tree.json");
    std::fs::write(&spec, tree_spec_json()).unwrap();
    // feature-only verification table
    let table = dir.path().join("rows.csv");
    let mut file = std::fs::File::create(&table).unwrap();
    writeln!(file, "x0,x1").unwrap();
    for i in 0..100 {
        let a = ((i * 37) % 200) as f64 / 100.0 - 1.0;
        let b = ((i * 91) % 200) as f64 / 100.0 - 1.0;
        writeln!(file, "{a:.4},{b:.4}").unwrap();
    }
    let ckpt = dir.path().join("tree.ckpt");
    let output = binary()
        .args([
            "convert",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
            "--verify",
            table.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(summary["nodes"], 3);
    assert_eq!(summary["leaves"], 4);
    assert_eq!(summary["verified_rows"], 100);
    assert!(ckpt.exists());
}

#[test]
fn convert_rejects_malformed_json_with_usage_exit() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("broken.json");
    std::fs::write(&spec, "{\"n_features\": ").unwrap();
    let output = binary()
        .args([
            "convert",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            dir.path().join("x.ckpt").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn convert_verify_rejects_wrong_feature_count() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tree.json");
    std::fs::write(&spec, tree_spec_json()).unwrap();
    let table = dir.path().join("rows.csv");
    std::fs::write(&table, "x0,x1,x2,x3\n0.1,0.2,0.3,0.4\n").unwrap();
    let output = binary()
        .args([
            "convert",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            dir.path().join("x.ckpt").to_str().unwrap(),
            "--verify",
            table.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn check_suite_passes_and_supports_filters() {
    let output = binary().args(["check", "--seed", "1"]).output().unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let reports: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!(reports.as_array().unwrap().len() >= 10);

    let filtered = binary()
        .args(["check", "--seed", "1", "--only", "doubling"])
        .output()
        .unwrap();
    assert!(filtered.status.success());
    let reports: serde_json::Value = serde_json::from_slice(&filtered.stdout).unwrap();
    let names: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["check_name"].as_str().unwrap())
        .collect();
    assert_eq!(names, vec!["doubling_identity", "doubling_ndt"]);

    let forced = binary()
        .args(["check", "--seed", "1", "--only", "doubling", "--force-fail"])
        .output()
        .unwrap();
    assert_eq!(forced.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    let output = binary().args(["train", "--no-such-flag"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let output = binary().args(["frobnicate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let output = binary()
        .args([
            "train",
            "--data",
            "/nonexistent.csv",
            "--out",
            dir.path().join("x.ckpt").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn seed_env_var_sets_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs_csv(dir.path());
    let ckpt = dir.path().join("env.ckpt");
    let output = binary()
        .env("RESBOOST_SEED", "77")
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--trees",
            "2",
            "--depth",
            "1",
            "--epochs",
            "1",
            "--eta",
            "1.0",
            "--out",
            ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(metrics["seed"], 77);
}
