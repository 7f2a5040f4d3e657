//! Trains the GRU and self-attention backbones in the sequential scenario,
//! where the last recommendation click of each user is held out.
//!
//! Usage: `cargo run --release --example sequential_backbones`

use clardrec::datahub::{preprocess, Filters, Scenario};
use clardrec::evalkit::{evaluate, render_table, EvalNegatives, Partition};
use clardrec::synthgen::{generate, SynthConfig};
use clardrec::trainer::{fit, ExperimentConfig, FitOptions};

fn main() -> clardrec::Result<()> {
    let synth = SynthConfig {
        n_users: 300,
        n_items: 300,
        n_queries: 3000,
        d_g: 4,
        d_q: 4,
        click_bias: -3.0,
        ..SynthConfig::default()
    };
    let ing = generate(&synth)?.ingest()?;
    let split = preprocess(ing.catalog, &ing.records, Scenario::Sequential, Filters::default(), 0)?;
    println!("{} users kept, {} excluded", split.test_cases.len(), split.stats.excluded_short_users);
    let negs = EvalNegatives::sample(&split, 0)?;

    let mut rows = Vec::new();
    for backbone in ["gru", "sas"] {
        for variant in ["backbone", "clardrec"] {
            let mut cfg = ExperimentConfig::preset(&format!("kuaisar/{backbone}"))?;
            cfg.apply_overrides(&["batch_size=128", "max_epochs=5", &format!("variant={variant}")])?;
            let run = fit(&cfg, &split, &negs, &FitOptions::default())?;
            let test = evaluate(&run.model, &run.store, &split, &negs, Partition::Test, cfg.eval_batch)?;
            rows.push((format!("{backbone} {variant}"), test));
        }
    }
    print!("{}", render_table(&rows));
    Ok(())
}
