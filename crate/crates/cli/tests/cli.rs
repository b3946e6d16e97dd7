use std::path::Path;
use std::process::{Command, Output};

use tokprune_cli::config::ExperimentConfig;
use tokprune_core::scorer::CHECKPOINT_MAGIC;

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.output_dir = "run".into();
    c.suite.height = 4;
    c.suite.width = 4;
    c.suite.counts = [3, 3, 3];
    c.suite.train_counts = [4, 4, 4];
    c.sft.n0 = 16;
    c.sft.curriculum = vec![(0, 8.0)];
    c.sft.epochs = 2;
    c.grpo.iterations = 3;
    c
}

fn tokprune(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokprune"))
        .current_dir(dir)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tokprune(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup(config: &ExperimentConfig) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), config.to_toml().unwrap()).unwrap();
    dir
}

#[test]
fn init_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["init-config", "-o", "exp.toml"]);
    let text = std::fs::read_to_string(dir.path().join("exp.toml")).unwrap();
    let parsed = ExperimentConfig::from_toml(&text, Path::new("exp.toml")).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
}

#[test]
fn full_workflow_writes_expected_layout() {
    let dir = setup(&small_config());
    let d = dir.path();
    ok(d, &["generate-suite", "-c", "exp.toml"]);
    ok(d, &["train", "-c", "exp.toml"]);
    let eval = ok(d, &["evaluate", "-c", "exp.toml", "--budgets", "0.5,0.25"]);
    assert!(eval.contains("heuristic") && eval.contains("rl"), "{eval}");
    ok(d, &["classify-difficulty", "-c", "exp.toml"]);
    ok(d, &["granularity", "-c", "exp.toml"]);
    ok(d, &["sweep-budget", "-c", "exp.toml", "--ratios", "0.25,0.5,1.0"]);

    let run = d.join("run");
    for f in [
        "checkpoints/sft.ckpt",
        "checkpoints/rl.ckpt",
        "checkpoints/rl.ckpt.json",
        "results/train.manifest.json",
        "results/grpo_log.jsonl",
        "results/train_log.txt",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let ckpt = std::fs::read(run.join("checkpoints/rl.ckpt")).unwrap();
    assert_eq!(&ckpt[..4], &CHECKPOINT_MAGIC);
    let grpo_lines = std::fs::read_to_string(run.join("results/grpo_log.jsonl")).unwrap();
    assert_eq!(grpo_lines.lines().count(), 3);
}

#[test]
fn zero_iterations_make_rl_equal_sft() {
    let mut config = small_config();
    config.grpo.iterations = 0;
    let dir = setup(&config);
    ok(dir.path(), &["generate-suite", "-c", "exp.toml"]);
    let summary = ok(dir.path(), &["train", "-c", "exp.toml"]);
    assert!(summary.contains("0 iterations"), "{summary}");
    let ckpts = dir.path().join("run/checkpoints");
    assert_eq!(
        std::fs::read(ckpts.join("sft.ckpt")).unwrap(),
        std::fs::read(ckpts.join("rl.ckpt")).unwrap()
    );
}

#[test]
fn training_without_a_suite_fails_cleanly() {
    let dir = setup(&small_config());
    let out = tokprune(dir.path(), &["train", "-c", "exp.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn corrupted_checkpoint_version_is_rejected() {
    let dir = setup(&small_config());
    let d = dir.path();
    ok(d, &["generate-suite", "-c", "exp.toml"]);
    ok(d, &["train", "-c", "exp.toml"]);
    let path = d.join("run/checkpoints/rl.ckpt");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    let out = tokprune(d, &["evaluate", "-c", "exp.toml", "--checkpoint", "run/checkpoints/rl.ckpt"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("version"), "{stderr}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), "format_version = 1\nbogus = 3\n").unwrap();
    let out = tokprune(dir.path(), &["generate-suite", "-c", "exp.toml"]);
    assert!(!out.status.success());
}

#[test]
fn credit_demo_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let table = ok(dir.path(), &["credit-demo", "--rollouts", "20000", "--output", "credit.json"]);
    assert!(table.contains("culprit"), "{table}");
    assert!(!table.contains("-0.000000"), "{table}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("credit.json")).unwrap()).unwrap();
    assert_eq!(v["num_rollouts"], 20000);
}
