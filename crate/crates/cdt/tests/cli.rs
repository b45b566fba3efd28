//! End-to-end runs of the `cdt` binary and its exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn cdt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdt")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr_lines(o: &Output) -> Vec<String> {
    String::from_utf8_lossy(&o.stderr).lines().map(String::from).collect()
}

const CONFIG: &str = r#"{
  "dataset": {"n_scenarios": 24, "rng_seed": 5, "class_mix": [0.5, 0.25, 0.25]},
  "train": {
    "epochs": 2, "batch_size": 4, "diffusion_steps": 3, "variant": "endpoint",
    "eval_every": 1, "eval_limit": 4, "eval_k": 2, "val_fraction": 0.25,
    "model": {"width": 8, "heads": 2, "blocks": 1, "ff_mult": 2}
  },
  "ablation": {"steps_list": [1, 2], "epochs_per_step": 1}
}"#;

#[test]
fn full_pipeline_is_deterministic() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.json");
    fs::write(&cfg, CONFIG).unwrap();
    let data = d.join("data.jsonl");

    for round in 0..2 {
        let tag = |name: &str| d.join(format!("{round}.{name}"));
        assert_eq!(code(&cdt(&["gen-data", "--config", p(&cfg), "--out", p(&data)])), 0);
        let ckpt = tag("model.json");
        let o = cdt(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ckpt)]);
        assert_eq!(code(&o), 0, "{:?}", stderr_lines(&o));
        assert!(sibling_exists(&ckpt, "model.best.json") && sibling_exists(&ckpt, "model.loss.csv"));
        let preds = tag("preds.jsonl");
        let o = cdt(&["sample", "--ckpt", p(&ckpt), "--data", p(&data), "--variant", "endpoint", "--k", "6", "--out", p(&preds)]);
        assert_eq!(code(&o), 0, "{:?}", stderr_lines(&o));
        let report = tag("report.csv");
        assert_eq!(code(&cdt(&["eval", "--preds", p(&preds), "--data", p(&data), "--out", p(&report)])), 0);
        assert!(sibling_exists(&report, "report.per_scenario.csv"));
        let svg = tag("loss.svg");
        let o = cdt(&["plot", "--in", p(&ckpt.with_file_name(format!("{round}.model.loss.csv"))), "--out", p(&svg), "--columns", "total"]);
        assert_eq!(code(&o), 0, "{:?}", stderr_lines(&o));
        assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    }
    for name in ["model.json", "preds.jsonl", "report.csv", "report.per_scenario.csv"] {
        assert_eq!(fs::read(d.join(format!("0.{name}"))).unwrap(), fs::read(d.join(format!("1.{name}"))).unwrap(), "{name}");
    }
    let report = fs::read_to_string(d.join("0.report.csv")).unwrap();
    assert!(report.starts_with("metric,K,value,n\n"));
    assert!(report.contains("fsd,6,"));
}

fn sibling_exists(path: &Path, name: &str) -> bool {
    let round = path.file_name().unwrap().to_str().unwrap().split('.').next().unwrap();
    path.with_file_name(format!("{round}.{name}")).exists()
}

#[test]
fn ablation_writes_csv_and_plot() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.json");
    fs::write(&cfg, CONFIG).unwrap();
    let data = d.join("data.jsonl");
    assert_eq!(code(&cdt(&["gen-data", "--config", p(&cfg), "--out", p(&data)])), 0);
    let out = d.join("ablation");
    let o = cdt(&["ablate", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{:?}", stderr_lines(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("steps,epochs,min_ade"));
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,1,") && lines[2].starts_with("2,2,"));
    assert!(out.join("ablation.svg").exists());
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let check = |args: &[&str], want: i32, kind: &str| {
        let o = cdt(args);
        assert_eq!(code(&o), want, "{args:?}: {:?}", stderr_lines(&o));
        let lines = stderr_lines(&o);
        assert_eq!(lines.len(), 1, "{lines:?}");
        assert!(lines[0].starts_with(&format!("error[{kind}]: ")), "{lines:?}");
    };
    check(&["frobnicate"], 2, "usage");
    check(&["sample", "--ckpt", "x"], 2, "usage");

    let missing = d.join("nope.json");
    check(&["gen-data", "--config", p(&missing), "--out", p(&d.join("o"))], 4, "io");

    let bad_cfg = d.join("bad.json");
    fs::write(&bad_cfg, r#"{"dataset": {"class_mix": [0.5, 0.1, 0.1]}}"#).unwrap();
    check(&["gen-data", "--config", p(&bad_cfg), "--out", p(&d.join("o"))], 3, "config");
    fs::write(&bad_cfg, r#"{"trian": {}}"#).unwrap();
    check(&["gen-data", "--config", p(&bad_cfg), "--out", p(&d.join("o"))], 3, "config");

    let cfg = d.join("run.json");
    fs::write(&cfg, CONFIG).unwrap();
    let bad_data = d.join("bad.jsonl");
    fs::write(&bad_data, "{not json}\n").unwrap();
    check(&["train", "--config", p(&cfg), "--data", p(&bad_data), "--out", p(&d.join("m.json"))], 5, "parse");

    let data = d.join("data.jsonl");
    assert_eq!(code(&cdt(&["gen-data", "--config", p(&cfg), "--out", p(&data)])), 0);
    let ckpt = d.join("m.json");
    assert_eq!(code(&cdt(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ckpt)])), 0);
    check(
        &["sample", "--ckpt", p(&ckpt), "--data", p(&data), "--variant", "behavior", "--out", p(&d.join("p.jsonl"))],
        3,
        "config",
    );
    fs::write(&bad_cfg, "{\"format\": \"cdt-checkpoint\", \"version\": 99}").unwrap();
    let o = cdt(&["sample", "--ckpt", p(&bad_cfg), "--data", p(&data), "--variant", "endpoint", "--out", p(&d.join("p.jsonl"))]);
    assert_eq!(code(&o), 5, "{:?}", stderr_lines(&o));

    assert_eq!(code(&cdt(&["--help"])), 0);
}
