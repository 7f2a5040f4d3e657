//! Drives the command-line verbs in-process: synthesize logs, train two
//! seeds of two variants and merge them into a report.
//!
//! Usage: `cargo run --release --example cli_pipeline [work_dir]`

use std::path::PathBuf;

use clardrec::cli::dispatch;

fn run(args: &[&str]) {
    let code = dispatch(std::iter::once("clardrec").chain(args.iter().copied()));
    assert_eq!(code, 0, "clardrec {}", args.join(" "));
}

fn main() {
    let work = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/cli_pipeline"));
    let path = |p: &str| work.join(p).to_string_lossy().into_owned();
    run(&["synth", "--out", &path("data"), "--set", "n_users=500", "--set", "n_items=300", "--set", "d_g=4", "--set", "d_q=4"]);
    for variant in ["backbone", "clardrec"] {
        for seed in ["1", "2"] {
            run(&[
                "train",
                "--config",
                "preset:kuaisar/mlp",
                "--config",
                &path("data/logs.cfg"),
                "--set",
                "batch_size=256",
                "--set",
                "max_epochs=4",
                "--variant",
                variant,
                "--seed",
                seed,
                "--out",
                &path(&format!("runs/{variant}-{seed}")),
            ]);
        }
    }
    run(&["report", "--runs", &path("runs"), "--out", &path("report")]);
}
