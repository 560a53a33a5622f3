//! End-to-end runs of the command-line binary: workflows, output
//! formats, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn sgmp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgmp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_train_eval_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = sgmp(&["synth", "--out", "train.jsonl", "--images", "12", "--seed", "5"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("12 images"));

    let out = sgmp(
        &["train", "--data", "train.jsonl", "--out", "m.ckpt", "--epochs", "3"],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let log = stdout(&out);
    assert_eq!(log.matches("epoch=").count(), 3);
    assert!(log.contains("cls_loss=") && log.contains("wall_ms="));

    let out = sgmp(
        &["eval", "--data", "train.jsonl", "--model", "m.ckpt", "--task", "predcls", "--task", "sggen"],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("task: predcls"));
    assert!(text.contains("task: sggen"));
    assert!(text.contains("per_predicate_recall5:"));

    let out = sgmp(&["export-dot", "--data", "train.jsonl", "--out", "g.dot"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    let dot = std::fs::read_to_string(d.join("g.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
}

#[test]
fn deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = sgmp(&["synth", "--out", name, "--images", "6", "--seed", "9"], d);
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(d.join("a.jsonl")).unwrap(),
        std::fs::read(d.join("b.jsonl")).unwrap()
    );

    for name in ["a.ckpt", "b.ckpt"] {
        let out = sgmp(
            &["train", "--data", "a.jsonl", "--out", name, "--epochs", "2"],
            d,
        );
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(d.join("a.ckpt")).unwrap(),
        std::fs::read(d.join("b.ckpt")).unwrap()
    );
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "[synth]\nnum_images = 4\nseed = 2\n").unwrap();

    // file value applies
    let out = sgmp(&["synth", "--config", "run.toml", "--out", "a.jsonl"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("4 images"));

    // flag beats file
    let out = sgmp(
        &["synth", "--config", "run.toml", "--out", "b.jsonl", "--images", "2"],
        d,
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("2 images"));
}

#[test]
fn gradcheck_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgmp(&["gradcheck", "--iters", "1", "--hidden", "4", "--features", "3"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("gradcheck passed"));

    // an impossible threshold must fail verification
    let out = sgmp(&["gradcheck", "--iters", "1", "--hidden", "4", "--features", "3", "--threshold", "0"], dir.path());
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // usage error
    let out = sgmp(&["train", "--data"], d);
    assert_eq!(out.status.code(), Some(2));

    // missing input file
    let out = sgmp(&["train", "--data", "missing.jsonl", "--out", "m.ckpt"], d);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("missing.jsonl"));

    // corrupt dataset
    std::fs::write(d.join("bad.jsonl"), "not json\n").unwrap();
    let out = sgmp(&["train", "--data", "bad.jsonl", "--out", "m.ckpt"], d);
    assert_eq!(out.status.code(), Some(3));

    // invalid config value
    let out = sgmp(&["synth", "--out", "x.jsonl", "--ambiguity", "2.0"], d);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    // checkpoint/dataset vocab mismatch
    let ok = sgmp(&["synth", "--out", "train.jsonl", "--images", "4", "--seed", "1"], d);
    assert!(ok.status.success());
    let ok = sgmp(&["train", "--data", "train.jsonl", "--out", "m.ckpt", "--epochs", "1"], d);
    assert!(ok.status.success());
    let ok = sgmp(
        &["synth", "--out", "other.jsonl", "--images", "4", "--seed", "1", "--classes", "4"],
        d,
    );
    assert!(ok.status.success());
    let out = sgmp(&["eval", "--data", "other.jsonl", "--model", "m.ckpt", "--task", "predcls"], d);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("vocabulary"));
}

#[test]
fn ablate_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sgmp(&["synth", "--out", "t.jsonl", "--images", "4", "--seed", "3"], d);
    assert!(out.status.success());
    let out = sgmp(&["ablate", "--data", "t.jsonl", "--epochs", "1"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("iterations pooling"));
    for mode in ["weighted", "avg", "max"] {
        assert_eq!(text.matches(mode).count(), 4, "{text}");
    }
}
