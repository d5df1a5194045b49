mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgp"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dgp(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stages_compose_to_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.conf"), common::tiny_text("")).unwrap();
    let c = ["--config", "run.conf"];

    let log = ok(dir, &[&c[..], &["pretrain"]].concat());
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,loss"));
    let epochs: Vec<&str> = lines.collect();
    assert_eq!(epochs.len(), 3);
    assert!(epochs[0].starts_with("1,"));

    for stage in ["synth", "train", "score", "eval", "dump-prompts"] {
        ok(dir, &[&c[..], &[stage]].concat());
    }
    for f in ["encoder.ckpt", "model.ckpt", "scores.csv", "metrics.json", "prompts.csv"] {
        assert!(dir.join("out").join(f).is_file(), "{f} missing");
    }
    assert!(dir.join("out/synth/id/synth-id_A.txt").is_file());

    ok(dir, &[&c[..], &["pipeline", "--out", "whole"]].concat());
    let staged = fs::read(dir.join("out/metrics.json")).unwrap();
    let whole = fs::read(dir.join("whole/metrics.json")).unwrap();
    assert_eq!(staged, whole);
    assert_eq!(
        fs::read(dir.join("out/scores.csv")).unwrap(),
        fs::read(dir.join("whole/scores.csv")).unwrap()
    );
}

#[test]
fn eval_prints_metrics_json() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.conf"), common::tiny_text("")).unwrap();
    ok(dir, &["--config", "run.conf", "pipeline"]);
    let printed = ok(dir, &["--config", "run.conf", "eval"]);
    let v: serde_json::Value = serde_json::from_str(&printed).unwrap();
    assert_eq!(v["n_id"], 8);
    assert!(v["auc"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.conf"), common::tiny_text("")).unwrap();
    ok(dir, &["--config", "run.conf", "synth", "--seed", "3", "--out", "a"]);
    ok(dir, &["--config", "run.conf", "synth", "--seed", "4", "--out", "b"]);
    ok(dir, &["--config", "run.conf", "synth", "--out", "c"]);
    let read = |d: &str| fs::read(dir.join(d).join("synth/id/synth-id_A.txt")).unwrap();
    assert_eq!(read("a"), read("c"));
    assert_ne!(read("a"), read("b"));
}

#[test]
fn missing_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dgp(tmp.path(), &["pipeline"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn bad_key_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.conf"), "seed = 1\n\ndgp.lamda = 2\n").unwrap();
    let out = dgp(tmp.path(), &["--config", "bad.conf", "synth"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("dgp.lamda"), "{err}");
}

#[test]
fn train_without_encoder_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.conf"), common::tiny_text("")).unwrap();
    let out = dgp(tmp.path(), &["--config", "run.conf", "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("encoder.ckpt"));
}
