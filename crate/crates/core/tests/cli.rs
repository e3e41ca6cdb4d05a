use std::path::Path;
use std::process::{Command, Output};

fn discosyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_discosyn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SHORT_TRAIN: &str = r#"{
  "command": "train-discosyn",
  "seed": 3,
  "train": { "iterations": 2, "episodes_per_task": 1, "ppo_epochs": 1, "bound_every": 0 }
}"#;

#[test]
fn train_run_is_reproducible_and_reportable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SHORT_TRAIN);
    let run = tmp.path().join("run");
    let run_s = run.display().to_string();

    let first = discosyn(&["train-discosyn", "--config", &cfg, "--out", &run_s]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    for f in ["config.resolved.json", "manifest.json", "synergy.json", "curves.csv", "results.csv", "run.log"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["seed"], 3);
    let manifest = std::fs::read(run.join("manifest.json")).unwrap();

    let again = discosyn(&["train-discosyn", "--config", &cfg, "--out", &run_s]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(run.join("manifest.json")).unwrap(), manifest);

    let report_dir = tmp.path().join("report").display().to_string();
    let report = discosyn(&["report", &run_s, "--out", &report_dir]);
    assert!(report.status.success(), "{}", String::from_utf8_lossy(&report.stderr));
    let md = std::fs::read_to_string(tmp.path().join("report/report.md")).unwrap();
    assert!(md.contains("DiscoSyn4-L"));
    assert!(md.contains("no-ref"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "{\n  \"command\": \"train-discosyn\",\n  \"train\": { \"alpha4\": 1.0 }\n}\n");
    let out = tmp.path().join("run").display().to_string();
    let r = discosyn(&["train-discosyn", "--config", &cfg, "--out", &out]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("alpha4") && err.contains("line 3"), "{err}");
}

#[test]
fn mismatched_seed_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{ "command": "train-discosyn", "seed": 1, "train": { "seed": 2 } }"#);
    let r = discosyn(&["train-discosyn", "--config", &cfg]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn report_without_manifest_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report").display().to_string();
    let r = discosyn(&["report", &tmp.path().display().to_string(), "--out", &out]);
    assert_eq!(r.status.code(), Some(2));
}
