//! Trains the full model and one variant per dropped module on the same
//! synthetic split.
//!
//! Usage: `cargo run --release --example ablation`

use clardrec::datahub::{preprocess, Filters, Scenario};
use clardrec::evalkit::{evaluate, render_table, EvalNegatives, Partition};
use clardrec::synthgen::{generate, SynthConfig};
use clardrec::trainer::{fit, ExperimentConfig, FitOptions};

fn main() -> clardrec::Result<()> {
    let synth = SynthConfig {
        n_users: 800,
        n_items: 400,
        d_g: 4,
        d_q: 4,
        query_weight: 2.0,
        ..SynthConfig::default()
    };
    let ing = generate(&synth)?.ingest()?;
    let split = preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), 0)?;
    let negs = EvalNegatives::sample(&split, 0)?;

    let mut rows = Vec::new();
    for drop in ["", "CD", "FA", "DA", "CS"] {
        let mut cfg = ExperimentConfig::preset("kuaisar/mlp")?;
        cfg.apply_overrides(&["batch_size=256", "max_epochs=10", &format!("ablations={drop}")])?;
        let run = fit(&cfg, &split, &negs, &FitOptions::default())?;
        let test = evaluate(&run.model, &run.store, &split, &negs, Partition::Test, cfg.eval_batch)?;
        rows.push((cfg.label(), test));
    }
    print!("{}", render_table(&rows));
    Ok(())
}
