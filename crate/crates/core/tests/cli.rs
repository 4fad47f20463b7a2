//! The command-line tool: exit codes, strict configs and reproducible runs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "
preset = desk
data.train_scenes = 3
data.test_scenes = 2
data.points_per_scene = 512
train.semantic.epochs = 1
train.gspn.epochs = 1
train.rpointnet.epochs = 1
";

fn gspnkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gspnkit")).args(args).env("RUST_LOG", "warn").output().expect("spawn gspnkit")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_all(cfg: &str, out: &str) {
    let steps: [&[&str]; 6] = [
        &["gen-data"],
        &["train", "--stage", "semantic"],
        &["train", "--stage", "gspn"],
        &["train", "--stage", "rpointnet"],
        &["infer"],
        &["eval"],
    ];
    for s in steps {
        let mut args = s.to_vec();
        args.extend(["--config", cfg, "--out", out]);
        let o = gspnkit(&args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn train_without_stage_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = gspnkit(&["train", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn unknown_stage_is_a_config_error() {
    let o = gspnkit(&["train", "--stage", "backbone"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("backbone"));
}

#[test]
fn bad_config_aborts_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for text in ["data.train_scenes = 3\nnot.a_key = 1\n", "data.train_scenes = 0\n", "data.train_scenes = many\n"] {
        let cfg = write_config(dir.path(), text);
        let o = gspnkit(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{text}");
        assert!(!out.exists(), "{text}");
    }
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = gspnkit(&["gen-data", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_artifacts_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&gspnkit(&["infer", "--out", out])), 3);
    assert_eq!(code(&gspnkit(&["eval", "--out", out])), 3);
    assert_eq!(code(&gspnkit(&["export-ply", "--out", out])), 3);
}

#[test]
fn rpointnet_needs_earlier_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(code(&gspnkit(&["gen-data", "--config", &cfg, "--out", out])), 0);
    let o = gspnkit(&["train", "--stage", "rpointnet", "--config", &cfg, "--out", out]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("semantic"));
}

#[test]
fn gen_data_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let corpus = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = gspnkit(&["gen-data", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        (fs::read(out.join("train.corpus")).unwrap(), fs::read(out.join("test.corpus")).unwrap())
    };
    let a = corpus("a", "7");
    assert_eq!(a, corpus("b", "7"));
    assert_ne!(a, corpus("c", "8"));
}

#[test]
fn tiny_pipeline_reproduces_metrics_and_exports_ply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_all(&cfg, a.to_str().unwrap());
    run_all(&cfg, b.to_str().unwrap());
    let ma = fs::read_to_string(a.join("metrics.txt")).unwrap();
    assert!(ma.contains("ap50.mean"), "{ma}");
    assert_eq!(ma, fs::read_to_string(b.join("metrics.txt")).unwrap());
    for stage in ["semantic", "gspn", "rpointnet"] {
        let f = format!("{stage}.ckpt");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }

    let o = gspnkit(&["export-ply", "--scene", "1", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let gt = fs::read_to_string(a.join("ply/scene001_gt.ply")).unwrap();
    assert!(gt.starts_with("ply\nformat ascii 1.0\n"));
    assert!(a.join("ply/scene001_pred.ply").is_file());
    let o = gspnkit(&["export-ply", "--scene", "9", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}
