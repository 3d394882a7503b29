//! End-to-end tests of the `retscreen` binary: every subcommand is exercised
//! through a real process, including the failure paths.

use std::path::Path;
use std::process::{Command, Output};

fn retscreen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retscreen"))
        .args(args)
        .env_remove("RETSCREEN_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success\nstdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

fn assert_fails_mentioning(out: &Output, needle: &str) {
    assert!(!out.status.success(), "expected failure, got: {}", stdout(out));
    let err = stderr(out);
    assert!(err.contains(needle), "stderr should mention `{needle}`: {err}");
}

fn make_fixture(dir: &Path) {
    let out = retscreen(&[
        "fixture",
        "--out-dir",
        dir.to_str().unwrap(),
        "--n-per-class",
        "4",
        "--image-size",
        "48",
        "--seed",
        "11",
    ]);
    assert_ok(&out);
}

#[test]
fn fixture_train_evaluate_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_fixture(&data);
    for split in ["train", "validation", "test"] {
        assert!(data.join(format!("{split}.manifest")).exists(), "{split} manifest");
        assert!(data.join(split).join("labels.csv").exists());
    }

    // train from a config file with an epochs override
    let config = tmp.path().join("quick.toml");
    std::fs::write(&config, "preset = \"baseline\"\nepochs = 2\nseed = 3\n").unwrap();
    let run_dir = tmp.path().join("run");
    let out = retscreen(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(stdout(&out).contains("run complete"));
    for artifact in [
        "config.snapshot",
        "history.csv",
        "metrics.json",
        "roc_class0.csv",
        "roc_class1.csv",
        "model.bin",
        "run_manifest.json",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
    let snapshot = std::fs::read_to_string(run_dir.join("config.snapshot")).unwrap();
    assert!(snapshot.contains("epochs = 2"), "override not snapshotted: {snapshot}");
    let history = std::fs::read_to_string(run_dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3, "header + one row per epoch");

    // rerunning into the same directory fails without --force
    let out = retscreen(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert_fails_mentioning(&out, "force");

    // evaluate the exported model on the test split, twice: idempotent
    let eval = |out_file: &Path| {
        let out = retscreen(&[
            "evaluate",
            "--run-dir",
            run_dir.to_str().unwrap(),
            "--data-dir",
            data.to_str().unwrap(),
            "--split",
            "test",
            "--out",
            out_file.to_str().unwrap(),
        ]);
        assert_ok(&out);
        std::fs::read(out_file).unwrap()
    };
    let first = eval(&tmp.path().join("m1.json"));
    let second = eval(&tmp.path().join("m2.json"));
    assert_eq!(first, second, "evaluate is not deterministic");
    let json: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert!(json.get("accuracy").is_some());
    assert_eq!(json["per_class"].as_array().unwrap().len(), 2);
    assert!(json.get("confusion_matrix").is_some());

    // report renders the run directory and writes report.txt
    let out = retscreen(&["report", "--run-dir", run_dir.to_str().unwrap()]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("accuracy"));
    assert!(text.contains("final epoch"));
    assert!(run_dir.join("report.txt").exists());
}

#[test]
fn evaluate_stored_predictions_reproduces_reported_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    // confusion counts [[494, 12], [47, 87]] as a prediction table
    let mut csv = String::from("y_true,y_pred\n");
    for (y, p, n) in [(0, 0, 494), (0, 1, 12), (1, 0, 47), (1, 1, 87)] {
        for _ in 0..n {
            csv.push_str(&format!("{y},{p}\n"));
        }
    }
    let pred_path = tmp.path().join("preds.csv");
    std::fs::write(&pred_path, csv).unwrap();
    let out = retscreen(&["evaluate", "--predictions", pred_path.to_str().unwrap()]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("0.91"), "accuracy/precision0 line: {text}");
    assert!(text.contains("0.98"), "recall0: {text}");
    assert!(text.contains("0.94"), "f1 class 0: {text}");
    assert!(text.contains("0.88"), "precision1: {text}");
    assert!(text.contains("0.65"), "recall1: {text}");
    assert!(text.contains("0.75"), "f1 class 1: {text}");
    assert!(text.contains("0.90"), "weighted f1: {text}");
}

#[test]
fn threshold_sweep_and_policies() {
    let tmp = tempfile::tempdir().unwrap();
    let pred_path = tmp.path().join("scores.csv");
    std::fs::write(
        &pred_path,
        "y_true,score\n0,0.1\n0,0.2\n0,0.4\n0,0.7\n1,0.3\n1,0.6\n1,0.8\n1,0.9\n",
    )
    .unwrap();

    let sweep_path = tmp.path().join("sweep.csv");
    let out = retscreen(&[
        "threshold",
        "--predictions",
        pred_path.to_str().unwrap(),
        "--out",
        sweep_path.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(stdout(&out).contains("selected threshold"));
    let sweep = std::fs::read_to_string(&sweep_path).unwrap();
    assert!(sweep.starts_with("threshold,precision1,recall1,f1_1,accuracy,youden_j"));
    // sentinel 0 plus 8 distinct scores plus one above the max
    assert_eq!(sweep.lines().count(), 11);

    // a recall floor forces a threshold low enough to catch 90% of class 1
    let out = retscreen(&[
        "threshold",
        "--predictions",
        pred_path.to_str().unwrap(),
        "--policy",
        "min_recall=0.9",
    ]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("selected threshold: 0.3"), "{text}");

    let out = retscreen(&[
        "threshold",
        "--predictions",
        pred_path.to_str().unwrap(),
        "--policy",
        "recall>0.9",
    ]);
    assert_fails_mentioning(&out, "unknown policy");
}

#[test]
fn train_rejects_bad_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_fixture(&data);

    // neither --config nor --experiment
    let out = retscreen(&[
        "train",
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("r1").to_str().unwrap(),
    ]);
    assert_fails_mentioning(&out, "--config or --experiment");

    // misspelled config key is named in the error
    let config = tmp.path().join("typo.toml");
    std::fs::write(&config, "preset = \"baseline\"\nepcohs = 2\n").unwrap();
    let out = retscreen(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("r2").to_str().unwrap(),
    ]);
    assert_fails_mentioning(&out, "epcohs");

    // missing dataset directory
    let out = retscreen(&[
        "train",
        "--experiment",
        "baseline",
        "--data-dir",
        tmp.path().join("nowhere").to_str().unwrap(),
        "--out-dir",
        tmp.path().join("r3").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));
}

#[test]
fn prepare_reports_label_errors_with_row_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_fixture(&data);
    // corrupt one label in the training CSV
    let labels = data.join("train").join("labels.csv");
    let text = std::fs::read_to_string(&labels).unwrap();
    std::fs::write(&labels, text.replacen(",1\n", ",2\n", 1)).unwrap();
    let out = retscreen(&["prepare", "--data-dir", data.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("train"), "names the split: {err}");
    assert!(err.contains("row"), "names the offending row: {err}");
}

#[test]
fn evaluate_requires_a_source_of_predictions() {
    let out = retscreen(&["evaluate"]);
    assert!(!out.status.success());
    // clap emits the usage error before our code runs
    let err = stderr(&out);
    assert!(err.contains("run-dir") || err.contains("predictions"), "{err}");
}
