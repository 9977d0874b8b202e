use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kspec_core::harness::ExperimentConfig;
use kspec_core::PlantKind;
use serde_json::Value;

fn kspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kspec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn smoke_config(dir: &Path, patch: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(repo_file("configs/smoke.json")).unwrap()).unwrap();
    patch(&mut v);
    let path = dir.join("config.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_desk_configs_match_the_library() {
    for (file, plant) in [
        ("configs/desk_wiener.json", PlantKind::Wiener),
        ("configs/desk_hammerstein.json", PlantKind::Hammerstein),
    ] {
        let cfg = ExperimentConfig::from_json(&fs::read_to_string(repo_file(file)).unwrap()).unwrap();
        assert_eq!(cfg, ExperimentConfig::desk(plant), "{file}");
    }
    ExperimentConfig::from_json(&fs::read_to_string(repo_file("configs/smoke.json")).unwrap()).unwrap();
}

#[test]
fn demo_fig2_reports_ordering_and_tie() {
    let out = kspec(&["demo-fig2"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("ordering: 1 > 4 >"), "{text}");
    assert!(text.contains("tie: signals 2 and 3"), "{text}");
}

#[test]
fn generate_writes_csv_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("data");
    let out = kspec(&["generate", "--plant", "hammerstein", "--num", "4", "--len", "64", "--seed", "9", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for n in 1..=4 {
        let csv = fs::read_to_string(out_dir.join(format!("dataset_{n:05}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 65);
        assert!(out_dir.join(format!("dataset_{n:05}.json")).exists());
    }
    let cfg: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["plant"], "hammerstein");
    assert_eq!(cfg["seed"], 9);

    let again = dir.path().join("again");
    kspec(&["generate", "--plant", "hammerstein", "--num", "4", "--len", "64", "--seed", "9", "--out", s(&again)]);
    assert_eq!(
        fs::read(out_dir.join("dataset_00003.csv")).unwrap(),
        fs::read(again.join("dataset_00003.csv")).unwrap()
    );
}

#[test]
fn run_then_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path(), |_| {});
    let runs = dir.path().join("runs");
    let out = kspec(&["run", "--config", s(&cfg), "--out", s(&runs)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(runs.join("records.jsonl")).unwrap().lines().count(), 12);
    let summary: Value = serde_json::from_str(&fs::read_to_string(runs.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total"], 12);

    let out = kspec(&["correlate", "--runs", s(&runs), "--metric", "kspectral", "--epoch", "1"]);
    assert_eq!(code(&out), 0);
    let entries: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(entries.as_array().unwrap().len(), 4);
    for e in entries.as_array().unwrap() {
        let rho = e["rho"].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&rho));
    }
    let csv = fs::read_to_string(runs.join("correlate_kspectral_epoch1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    // every dataset has the same size, so the baseline is undefined
    let out = kspec(&["correlate", "--runs", s(&runs), "--metric", "size", "--epoch", "1"]);
    let entries: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(entries.as_array().unwrap().iter().all(|e| e["rho"].is_null()));

    let out = kspec(&["correlate", "--runs", s(&runs), "--metric", "valloss", "--epoch", "0"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn sweeps_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path(), |_| {});
    for (mode, rows) in [("epoch", 4 * 2), ("k", 3 * 2)] {
        let out_dir = dir.path().join(mode);
        let out = kspec(&["sweep", "--config", s(&cfg), "--mode", mode, "--out", s(&out_dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let csv = fs::read_to_string(out_dir.join(format!("sweep_{mode}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), rows + 1, "{csv}");
    }
}

#[test]
fn train_writes_epochs_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path(), |_| {});
    let out_dir = dir.path().join("one");
    let out = kspec(&["train", "--config", s(&cfg), "--out", s(&out_dir), "--dataset", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(out_dir.join("epochs.jsonl")).unwrap().lines().count(), 4);
    let record: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["dataset"], 3);
    assert!(out_dir.join("checkpoint.json").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&kspec(&["run", "--config", s(&missing), "--out", s(dir.path())])), 2);

    let unknown = smoke_config(dir.path(), |v| v["colour"] = "blue".into());
    assert_eq!(code(&kspec(&["run", "--config", s(&unknown), "--out", s(dir.path())])), 2);

    let invalid = smoke_config(dir.path(), |v| v["num_datasets"] = 1.into());
    assert_eq!(code(&kspec(&["sweep", "--config", s(&invalid), "--mode", "k", "--out", s(dir.path())])), 2);

    let out = kspec(&["generate", "--plant", "wiener", "--num", "1", "--len", "64", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path(), |v| {
        v["train"]["learning_rate"] = 50.0.into();
        v["train"]["grad_clip"] = Value::Null;
    });
    let runs = dir.path().join("runs");
    let out = kspec(&["run", "--config", s(&cfg), "--out", s(&runs)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stdout));
    // records are still written for inspection
    assert!(runs.join("records.jsonl").exists());
}
