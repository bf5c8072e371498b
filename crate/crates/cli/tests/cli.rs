use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use robgan_cli::presets::preset;
use robgan_cli::read_checkpoint;

fn robgan(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robgan"))
        .args(args)
        .env(robgan_cli::OUT_DIR_ENV, out)
        .output()
        .unwrap()
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn group_of(record: &Value) -> &str {
    record["case"].as_str().unwrap().split('/').next().unwrap()
}

fn smoke_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = preset("desk_p0_linear_h").unwrap();
    cfg.total_steps = 10;
    cfg.log_interval = 5;
    cfg.checkpoint_interval = 5;
    cfg.eval_samples = 200;
    let path = dir.join("smoke.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn verify_default_passes_every_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = robgan(tmp.path(), &["verify"]);
    assert_eq!(out.status.code(), Some(0));
    let records = json_lines(&out);
    assert!(records.len() > 100);
    assert!(records.iter().all(|r| r["pass"] == true));
    for group in ["theorem2", "theorem1", "lemma1", "lemma2", "decomposition"] {
        assert!(records.iter().any(|r| group_of(r) == group), "{group}");
    }
}

#[test]
fn verify_coarse_grid_still_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = robgan(tmp.path(), &["verify", "--grid-step", "0.05", "--k", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let records = json_lines(&out);
    assert!(records.iter().filter(|r| r["grid_step"] == 0.05).count() > 0);
}

#[test]
fn verify_only_filters_to_one_group() {
    let tmp = tempfile::tempdir().unwrap();
    let out = robgan(tmp.path(), &["verify", "--only", "lemma1"]);
    assert_eq!(out.status.code(), Some(0));
    let records = json_lines(&out);
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| group_of(r) == "lemma1"));
}

#[test]
fn verify_rejects_unknown_group() {
    let tmp = tempfile::tempdir().unwrap();
    let out = robgan(tmp.path(), &["verify", "--only", "theorem9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_smoke_writes_artifacts_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = robgan(dir, &["train", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["metrics.json", "metrics.jsonl", "generator.json", "discriminator.json", "samples.csv", "config.json"] {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, y, "{name}");
    }
    let metrics: Value = serde_json::from_slice(&fs::read(a.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["success"], false);
    assert_eq!(metrics["steps_completed"], 10);
    assert_eq!(fs::read_to_string(a.join("metrics.jsonl")).unwrap().lines().count(), 2);
    let g = read_checkpoint(&a.join("generator.json")).unwrap();
    assert!(!g.layers.is_empty());
}

#[test]
fn train_rejects_invalid_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = robgan(tmp.path(), &["train", "desk_p9_log"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    let mut cfg: Value = serde_json::to_value(preset("desk_p0_log").unwrap()).unwrap();
    cfg["batch_size"] = json!(0);
    fs::write(&bad, cfg.to_string()).unwrap();
    assert_eq!(robgan(tmp.path(), &["train", bad.to_str().unwrap()]).status.code(), Some(2));
    cfg["batch_size"] = json!(8);
    cfg["bogus_key"] = json!(1);
    fs::write(&bad, cfg.to_string()).unwrap();
    assert_eq!(robgan(tmp.path(), &["train", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn eval_scores_a_written_sample_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path());
    assert_eq!(robgan(tmp.path(), &["train", cfg.to_str().unwrap()]).status.code(), Some(0));
    let out = robgan(tmp.path(), &["eval", tmp.path().join("samples.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let score = &json_lines(&out)[0];
    let metrics: Value = serde_json::from_slice(&fs::read(tmp.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(score["modes_learned"], metrics["modes_learned"]);
    assert_eq!(score["tv_to_uniform"], metrics["tv_to_uniform"]);
}

fn sweep_spec(dir: &Path, seeds: usize, models: &[&str]) -> std::path::PathBuf {
    let spec = json!({
        "models": models.iter().map(|m| json!({"loss_d": m, "loss_g": m})).collect::<Vec<_>>(),
        "clips": [null],
        "adversaries": [{"kind": "flipping", "p": 0.2}],
        "seeds_per_cell": seeds,
        "base_seed": 3,
        "base": "desk_p0_log",
        "overrides": {"total_steps": 20, "checkpoint_interval": 10, "eval_samples": 200},
    });
    let path = dir.join("sweep.json");
    fs::write(&path, spec.to_string()).unwrap();
    path
}

#[test]
fn sweep_with_two_seeds_has_two_rows_and_one_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = sweep_spec(tmp.path(), 2, &["linear_h"]);
    let out = robgan(tmp.path(), &["sweep", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = fs::read_to_string(tmp.path().join("runs.csv")).unwrap();
    let agg = fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert_eq!(agg.lines().count(), 2);
    assert!(runs.starts_with("model,loss_d,loss_g,p,clip,seed,modes_learned,success,steps_to_success,tv_to_uniform,failed"));
    let seeds: Vec<&str> = runs.lines().skip(1).map(|l| l.split(',').nth(5).unwrap()).collect();
    assert_eq!(seeds, ["3", "4"]);
}

#[test]
fn sweep_output_does_not_depend_on_parallelism() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = sweep_spec(tmp.path(), 3, &["linear_h", "log"]);
    let (a, b) = (tmp.path().join("serial"), tmp.path().join("parallel"));
    assert_eq!(robgan(&a, &["sweep", spec.to_str().unwrap(), "--parallel", "1"]).status.code(), Some(0));
    assert_eq!(robgan(&b, &["sweep", spec.to_str().unwrap(), "--parallel", "8"]).status.code(), Some(0));
    for name in ["runs.csv", "aggregate.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn sweep_rejects_an_empty_axis() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("empty.json");
    fs::write(&path, json!({"models": [], "clips": [null], "adversaries": [{"kind": "flipping", "p": 0.0}], "seeds_per_cell": 1}).to_string()).unwrap();
    assert_eq!(robgan(tmp.path(), &["sweep", path.to_str().unwrap()]).status.code(), Some(2));
}
