//! End-to-end tests driving the `stepeval` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stepeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepeval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("synth");
    let mut args = vec![
        "synth".to_string(),
        "--out".to_string(),
        path_str(&out),
        "--count".to_string(),
        "12".to_string(),
        "--seed".to_string(),
        "5".to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let output = Command::new(env!("CARGO_BIN_EXE_stepeval"))
        .args(&args)
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "synth failed: {output:?}");
    out
}

#[test]
fn synth_then_evaluate_matches_expected_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = synth(dir.path(), &[]);
    let eval_dir = dir.path().join("eval");

    let output = stepeval(&[
        "evaluate",
        "--corpus",
        &path_str(&synth_dir.join("corpus.json")),
        "--out",
        &path_str(&eval_dir),
        "--scripted",
        &path_str(&synth_dir.join("predictions.json")),
        "--mode",
        "live",
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    let expected: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(synth_dir.join("expected_metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metrics["metrics"], expected);

    for artifact in [
        "metrics.csv",
        "breakdown_answer_step_count.csv",
        "breakdown_annotation_source.csv",
        "breakdown_scene_category.csv",
        "chart.csv",
        "timing.json",
        "run_record.json",
    ] {
        assert!(eval_dir.join(artifact).is_file(), "missing {artifact}");
    }
}

#[test]
fn noisy_run_exits_with_partial_failures() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = synth(dir.path(), &["--drop-step-prob", "1.0"]);
    let output = stepeval(&[
        "evaluate",
        "--corpus",
        &path_str(&synth_dir.join("corpus.json")),
        "--out",
        &path_str(&dir.path().join("eval")),
        "--scripted",
        &path_str(&synth_dir.join("predictions.json")),
        "--mode",
        "live",
    ]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("F_p -"), "undefined F_p renders as -: {stdout}");
}

#[test]
fn record_then_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = synth(dir.path(), &["--drop-edge-prob", "0.3"]);
    let cache = dir.path().join("cache");
    let corpus = path_str(&synth_dir.join("corpus.json"));
    let predictions = path_str(&synth_dir.join("predictions.json"));

    let output = stepeval(&[
        "evaluate",
        "--corpus",
        &corpus,
        "--out",
        &path_str(&dir.path().join("rec")),
        "--scripted",
        &predictions,
        "--mode",
        "record",
        "--cache-dir",
        &path_str(&cache),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");

    for out_name in ["rep1", "rep2"] {
        let output = stepeval(&[
            "evaluate",
            "--corpus",
            &corpus,
            "--out",
            &path_str(&dir.path().join(out_name)),
            "--mode",
            "replay",
            "--cache-dir",
            &path_str(&cache),
        ]);
        assert_eq!(output.status.code(), Some(0), "{output:?}");
    }
    let a = std::fs::read(dir.path().join("rep1/metrics.json")).unwrap();
    let b = std::fs::read(dir.path().join("rep2/metrics.json")).unwrap();
    assert_eq!(a, b);
    let rec = std::fs::read(dir.path().join("rec/metrics.json")).unwrap();
    assert_eq!(a, rec);

    // Cache bookkeeping commands over the recorded fixture.
    let stats = stepeval(&["cache", "stats", "--dir", &path_str(&cache)]);
    assert_eq!(stats.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&stats.stdout);
    assert!(stdout.contains("records:"), "{stdout}");

    let gc = stepeval(&["cache", "gc", "--dir", &path_str(&cache)]);
    assert_eq!(gc.status.code(), Some(0));
    let stats_after = stepeval(&["cache", "stats", "--dir", &path_str(&cache)]);
    assert!(String::from_utf8_lossy(&stats_after.stdout).contains("records: 0"));
}

#[test]
fn augment_writes_provenance_fields() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = synth(dir.path(), &[]);
    let out = dir.path().join("augmented.json");
    let output = stepeval(&[
        "augment",
        "--input",
        &path_str(&synth_dir.join("corpus.json")),
        "--out",
        &path_str(&out),
        "--rule",
        "all",
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");

    let text = std::fs::read_to_string(&out).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let array = value.as_array().unwrap();
    assert!(!array.is_empty(), "augmentation produced nothing");
    for sample in array {
        assert!(sample["parent_id"].is_string());
        let rule = sample["rule"].as_str().unwrap();
        assert!(rule == "subgraph" || rule == "expansion");
        let source = sample["source"].as_str().unwrap();
        assert_eq!(source, rule);
    }
}

#[test]
fn align_reports_offset_delta() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "model,f_c,f_p\nx,50.0,10.0\ny,70.0,30.0\n").unwrap();
    std::fs::write(&b, "model,f_c,f_p\nx,53.0,13.0\ny,73.0,33.0\n").unwrap();
    let out = dir.path().join("align.json");
    let output = stepeval(&[
        "align",
        "--table-a",
        &path_str(&a),
        "--table-b",
        &path_str(&b),
        "--out",
        &path_str(&out),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((stats["delta"].as_f64().unwrap() - 3.0).abs() < 1e-9);
    assert!((stats["rho_c"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn report_reemits_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = synth(dir.path(), &[]);
    let eval_dir = dir.path().join("eval");
    let output = stepeval(&[
        "evaluate",
        "--corpus",
        &path_str(&synth_dir.join("corpus.json")),
        "--out",
        &path_str(&eval_dir),
        "--scripted",
        &path_str(&synth_dir.join("predictions.json")),
        "--mode",
        "live",
    ]);
    assert_eq!(output.status.code(), Some(0));

    let re_dir = dir.path().join("re");
    let output = stepeval(&[
        "report",
        "--run",
        &path_str(&eval_dir.join("run_record.json")),
        "--out",
        &path_str(&re_dir),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let original = std::fs::read(eval_dir.join("metrics.json")).unwrap();
    let reemitted = std::fs::read(re_dir.join("metrics.json")).unwrap();
    assert_eq!(original, reemitted);
}

#[test]
fn config_errors_exit_one() {
    let output = stepeval(&["evaluate", "--out", "/tmp/nowhere"]);
    assert_eq!(output.status.code(), Some(1), "{output:?}");

    let output = stepeval(&[
        "evaluate",
        "--corpus",
        "x.json",
        "--out",
        "/tmp/nowhere",
        "--pipeline",
        "mystery",
    ]);
    assert_eq!(output.status.code(), Some(1), "{output:?}");

    let output = stepeval(&["definitely-not-a-command"]);
    assert_eq!(output.status.code(), Some(1), "{output:?}");
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = synth(dir.path(), &[]);
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"corpus = "{corpus}"
output = "{out}"
mode = "live"
pipeline = "basic"
concurrency = 2

[backends.answer]
kind = "scripted"
predictions = "{preds}"

[backends.scorer]
kind = "scripted"
predictions = "{preds}"
"#,
            corpus = path_str(&synth_dir.join("corpus.json")),
            out = path_str(&dir.path().join("eval")),
            preds = path_str(&synth_dir.join("predictions.json")),
        ),
    )
    .unwrap();
    let output = stepeval(&["evaluate", "--config", &path_str(&config)]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    assert!(dir.path().join("eval/metrics.json").is_file());
}
