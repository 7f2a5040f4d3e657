//! Compares the backbone alone, the backbone trained on search clicks as
//! extra recommendation data (AUG) and the full model on synthetic logs
//! where the query factor dominates search clicks.
//!
//! Usage: `cargo run --release --example negative_transfer [synth.key=value ...] [key=value ...]`

use clardrec::datahub::{preprocess, Filters, Scenario};
use clardrec::evalkit::{evaluate, median_table, render_table, EvalNegatives, MetricTable, Partition};
use clardrec::synthgen::{generate, SynthConfig};
use clardrec::trainer::{fit, ExperimentConfig, FitOptions};

const SEEDS: [u64; 3] = [1, 2, 3];

fn main() -> clardrec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (synth_args, model_args): (Vec<&String>, Vec<&String>) = args.iter().partition(|a| a.starts_with("synth."));
    let mut base = serde_json::to_value(SynthConfig {
        n_users: 1000,
        n_items: 500,
        d_g: 4,
        d_q: 4,
        query_weight: 2.0,
        general_weight: 0.5,
        ..SynthConfig::default()
    })?;
    for a in synth_args {
        let (k, v) = a["synth.".len()..].split_once('=').expect("synth.key=value");
        base[k] = serde_json::from_str(v)?;
    }

    let variants = ["backbone", "aug", "clardrec"];
    let mut tables: Vec<Vec<MetricTable>> = vec![Vec::new(); variants.len()];
    for seed in SEEDS {
        let mut synth: SynthConfig = serde_json::from_value(base.clone())?;
        synth.seed = seed;
        let ing = generate(&synth)?.ingest()?;
        let split = preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), 0)?;
        let negs = EvalNegatives::sample(&split, 0)?;
        for (k, variant) in variants.iter().enumerate() {
            let mut cfg = ExperimentConfig::preset("kuaisar/mlp")?;
            cfg.apply_overrides(&[format!("variant={variant}"), format!("seed={seed}")])?;
            cfg.apply_overrides(&model_args)?;
            let run = fit(&cfg, &split, &negs, &FitOptions::default())?;
            let test = evaluate(&run.model, &run.store, &split, &negs, Partition::Test, cfg.eval_batch)?;
            println!("seed {seed} {variant:<9} best epoch {:>2}  {test}", run.best_epoch);
            tables[k].push(test);
        }
    }
    let rows: Vec<(String, MetricTable)> = variants
        .iter()
        .zip(&tables)
        .map(|(v, t)| (v.to_string(), median_table(t).expect("three seeds")))
        .collect();
    print!("{}", render_table(&rows));
    Ok(())
}
