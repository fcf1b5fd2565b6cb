use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &[
    "--set",
    "model.hidden_size=4",
    "--set",
    "model.num_samples=8",
    "--set",
    "model.num_selected=3",
    "--set",
    "model.coverage_samples=2",
    "--set",
    "eval.runs=1",
    "--seed",
    "3",
];

fn phapred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phapred"))
        .args(args)
        .args(SMALL)
        .output()
        .expect("binary runs")
}

fn bare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phapred"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = phapred(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn first_line(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

fn assert_single_line_error(out: &Output, needle: &str) {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains(needle), "expected `{needle}` in {err}");
}

#[test]
fn full_pipeline_runs_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data.jsonl");
    let ck = d.join("full.json");
    let fixed = d.join("fixed.json");

    ok(&["generate", "--count", "12", "--out", s(&data)]);
    let meta = first_line(&data);
    assert_eq!(meta["meta"]["command"], "generate", "{meta}");
    assert_eq!(meta["meta"]["seed"], 3);

    ok(&[
        "label",
        "--data",
        s(&data),
        "--out",
        s(&d.join("relabeled.jsonl")),
    ]);
    ok(&[
        "perturb",
        "--data",
        s(&data),
        "--fraction",
        "0.1",
        "--out",
        s(&d.join("noisy.jsonl")),
    ]);

    ok(&[
        "train",
        "--data",
        s(&data),
        "--out-checkpoint",
        s(&ck),
        "--epochs",
        "1",
    ]);
    assert!(d.join("full.log.jsonl").exists());
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out-checkpoint",
        s(&fixed),
        "--epochs",
        "1",
        "--variant",
        "fixed_mode_baseline",
    ]);

    let p1 = d.join("pred1.jsonl");
    let p2 = d.join("pred2.jsonl");
    ok(&[
        "sample",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&data),
        "--method",
        "nms",
        "--out",
        s(&p1),
    ]);
    ok(&[
        "sample",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&data),
        "--method",
        "nms",
        "--out",
        s(&p2),
    ]);
    let a = std::fs::read_to_string(&p1).unwrap();
    assert_eq!(a, std::fs::read_to_string(&p2).unwrap());
    let row: Value = serde_json::from_str(a.lines().nth(1).unwrap()).unwrap();
    let preds = row["predictions"].as_array().unwrap();
    assert_eq!(preds.len(), 3);
    let total: f64 = preds
        .iter()
        .map(|p| p["probability"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);

    let out_dir = d.join("eval");
    let full_arg = format!("full={}", s(&ck));
    let fixed_arg = format!("fixed_mode_baseline={}", s(&fixed));
    let out = ok(&[
        "eval",
        "--checkpoint",
        &full_arg,
        "--checkpoint",
        &fixed_arg,
        "--data",
        s(&data),
        "--protocol",
        "table4",
        "--out-dir",
        s(&out_dir),
        "--plots",
        "2",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("fixed_mode_baseline"));
    let report = std::fs::read_to_string(out_dir.join("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 3, "{report}");
    assert!(out_dir.join("tables.md").exists());
    assert_eq!(std::fs::read_dir(out_dir.join("plots")).unwrap().count(), 2);

    let svg = d.join("scene.svg");
    ok(&[
        "plot",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&data),
        "--out",
        s(&svg),
    ]);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn missing_checkpoint_is_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    ok(&["generate", "--count", "2", "--out", s(&data)]);
    let out = phapred(&[
        "eval",
        "--checkpoint",
        "/nonexistent/ck.json",
        "--data",
        s(&data),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_single_line_error(&out, "missing checkpoint");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_override_names_the_key() {
    let out = bare(&[
        "--set",
        "model.width=3",
        "generate",
        "--out",
        "/tmp/never.jsonl",
    ]);
    assert_single_line_error(&out, "model.width");
}

#[test]
fn usage_errors_are_one_line() {
    let out = phapred(&["sample", "--method", "best"]);
    assert_single_line_error(&out, "");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_file_is_reported() {
    let out = phapred(&[
        "label",
        "--data",
        "/nonexistent/data.jsonl",
        "--out",
        "/tmp/x.jsonl",
    ]);
    assert_single_line_error(&out, "/nonexistent/data.jsonl");
}
