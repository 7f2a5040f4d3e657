use std::fs;
use std::path::{Path, PathBuf};

use clardrec::cli::{dispatch, RunManifest, RunMetrics};

const SMALL: [&str; 6] = ["d_e=4", "d_h=8", "l_b=1", "l_e=1", "batch_size=32", "max_epochs=2"];

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("clardrec").chain(args.iter().copied()))
}

fn synth(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join(format!("data{seed}"));
    let code = run(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--set",
        "n_users=60",
        "--set",
        "n_items=300",
        "--set",
        "n_queries=180",
        "--set",
        "d_g=3",
        "--set",
        "d_q=3",
        "--set",
        "click_bias=-1.5",
        "--set",
        "impressions=10",
    ]);
    assert_eq!(code, 0);
    out.join("logs.cfg")
}

fn train(logs: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--config", logs.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for s in SMALL {
        args.extend(["--set", s]);
    }
    args.extend_from_slice(extra);
    run(&args)
}

fn metrics(dir: &Path) -> RunMetrics {
    serde_json::from_slice(&fs::read(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn train_eval_export_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = synth(tmp.path(), 1);
    let runs = tmp.path().join("runs");
    for seed in ["1", "2"] {
        let out = runs.join(format!("s{seed}"));
        assert_eq!(train(&logs, &out, &["--seed", seed]), 0);
        for f in ["config.cfg", "manifest.json", "metrics.json", "train_log.jsonl", "checkpoint/best.json"] {
            assert!(out.join(f).is_file(), "{f}");
        }
    }
    let a = runs.join("s1");
    let m = metrics(&a);
    assert_eq!((m.label.as_str(), m.seed, m.finished), ("clardrec", 1, true));
    let manifest: RunManifest = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.dataset_fingerprint, m.dataset_fingerprint);

    assert_eq!(run(&["eval", "--out", a.to_str().unwrap()]), 0);
    let eval: serde_json::Value = serde_json::from_slice(&fs::read(a.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["test"]["ndcg5"].as_f64().unwrap(), m.test.ndcg5);

    assert_eq!(run(&["export-repr", "--out", a.to_str().unwrap(), "--items", "50", "--users", "20"]), 0);
    assert!(a.join("repr/repr.json").is_file());

    let report_dir = tmp.path().join("report");
    assert_eq!(run(&["report", "--runs", runs.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]), 0);
    let csv = fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
    assert!(csv.lines().last().unwrap().starts_with("cf,mlp,clardrec,median,"));
}

#[test]
fn frozen_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = synth(tmp.path(), 3);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(train(&logs, &a, &["--drop", "DA"]), 0);
    let frozen = a.join("config.cfg");
    assert_eq!(run(&["train", "--config", frozen.to_str().unwrap(), "--out", b.to_str().unwrap()]), 0);
    let (ma, mb) = (metrics(&a), metrics(&b));
    assert_eq!(ma.label, "clardrec-DA");
    assert_eq!((ma.test, ma.val, ma.best_epoch), (mb.test, mb.val, mb.best_epoch));
}

#[test]
fn ablate_and_sweep_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = synth(tmp.path(), 4);
    let out = tmp.path().join("ablate");
    let mut args = vec!["ablate", "--config", logs.to_str().unwrap(), "--out", out.to_str().unwrap(), "--drop", "CD,FA"];
    for s in SMALL {
        args.extend(["--set", s]);
    }
    assert_eq!(run(&args), 0);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["clardrec", "clardrec-CD", "clardrec-FA"]);

    let out = tmp.path().join("sweep");
    let mut args = vec!["sweep", "--config", logs.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for s in SMALL {
        args.extend(["--set", s]);
    }
    args.extend(["--lambda", "0.1,0.5", "--alpha", "0.1", "--beta", "0.2"]);
    assert_eq!(run(&args), 0);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn bad_input_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = synth(tmp.path(), 5);
    let out = tmp.path().join("x");
    assert_eq!(train(&logs, &out, &["--set", "learning_rate=0.1"]), 2);
    assert_eq!(train(&logs, &out, &["--variant", "nope"]), 1);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["eval", "--out", tmp.path().join("missing").to_str().unwrap()]), 1);
}

#[test]
fn report_refuses_runs_on_different_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    for seed in [6, 7] {
        let logs = synth(tmp.path(), seed);
        assert_eq!(train(&logs, &runs.join(format!("d{seed}")), &[]), 0);
    }
    assert_eq!(run(&["report", "--runs", runs.to_str().unwrap()]), 1);
    assert!(!runs.join("report.csv").exists());
}
