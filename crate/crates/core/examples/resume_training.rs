//! Stops a run after two epochs, resumes it from the saved state and checks
//! the result against an uninterrupted run.
//!
//! Usage: `cargo run --release --example resume_training`

use clardrec::datahub::{preprocess, Filters, Scenario};
use clardrec::evalkit::EvalNegatives;
use clardrec::synthgen::{generate, SynthConfig};
use clardrec::trainer::{fit, ExperimentConfig, FitOptions};

fn main() -> clardrec::Result<()> {
    let synth = SynthConfig {
        n_users: 400,
        n_items: 300,
        d_g: 4,
        d_q: 4,
        ..SynthConfig::default()
    };
    let ing = generate(&synth)?.ingest()?;
    let split = preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), 0)?;
    let negs = EvalNegatives::sample(&split, 0)?;
    let mut cfg = ExperimentConfig::preset("kuaisar/mlp")?;
    cfg.apply_overrides(&["batch_size=128", "max_epochs=5"])?;

    let dir = tempfile::tempdir().expect("temporary directory");
    let first = FitOptions {
        out: Some(dir.path().to_path_buf()),
        resume: false,
        halt_after: Some(2),
    };
    let part = fit(&cfg, &split, &negs, &first)?;
    println!("halted after {} epochs, finished: {}", part.history.len(), part.finished);
    let resumed = fit(
        &cfg,
        &split,
        &negs,
        &FitOptions {
            resume: true,
            halt_after: None,
            ..first
        },
    )?;
    let whole = fit(&cfg, &split, &negs, &FitOptions::default())?;
    println!(
        "resumed run matches the uninterrupted one: {}",
        resumed.store.fingerprint() == whole.store.fingerprint() && resumed.history == whole.history
    );
    Ok(())
}
