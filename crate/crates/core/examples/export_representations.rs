//! Trains briefly and writes item and user representations (every item
//! view plus the gate values) for external projection.
//!
//! Usage: `cargo run --release --example export_representations [out_dir]`

use std::path::PathBuf;

use clardrec::datahub::{preprocess, Filters, Scenario};
use clardrec::evalkit::{export_representations, EvalNegatives};
use clardrec::synthgen::{generate, SynthConfig};
use clardrec::trainer::{fit, ExperimentConfig, FitOptions};

fn main() -> clardrec::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/repr"));
    let synth = SynthConfig {
        n_users: 500,
        n_items: 300,
        d_g: 4,
        d_q: 4,
        ..SynthConfig::default()
    };
    let ing = generate(&synth)?.ingest()?;
    let split = preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), 0)?;
    let negs = EvalNegatives::sample(&split, 0)?;
    let mut cfg = ExperimentConfig::preset("kuaisar/mlp")?;
    cfg.apply_overrides(&["batch_size=256", "max_epochs=3"])?;
    let run = fit(&cfg, &split, &negs, &FitOptions::default())?;

    std::fs::create_dir_all(&out).expect("create output directory");
    let path = out.join("repr.json");
    let ids = export_representations(&run.model, &run.store, &split, 200, 100, 0, &path)?;
    println!("{}: {} items, {} users", path.display(), ids.items.len(), ids.users.len());
    Ok(())
}
