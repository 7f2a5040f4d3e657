//! Generates a small two-domain log, trains the full model and prints the
//! epoch history and test metrics.
//!
//! Usage: `cargo run --release --example train_synthetic [key=value ...]`

use clardrec::datahub::{preprocess, Filters, Scenario};
use clardrec::evalkit::{evaluate, EvalNegatives, Partition};
use clardrec::synthgen::{generate, SynthConfig};
use clardrec::trainer::{fit, ExperimentConfig, FitOptions};

fn main() -> clardrec::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let synth = SynthConfig {
        n_users: 800,
        n_items: 400,
        d_g: 4,
        d_q: 4,
        ..SynthConfig::default()
    };
    let data = generate(&synth)?;
    println!("{} rec clicks, {} search clicks", data.rec_clicks, data.src_clicks);
    let ing = data.ingest()?;
    let split = preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), 0)?;
    let negs = EvalNegatives::sample(&split, 0)?;

    let mut cfg = ExperimentConfig::preset("kuaisar/mlp")?;
    cfg.apply_overrides(&["batch_size=256", "max_epochs=15"])?;
    cfg.apply_overrides(&overrides)?;
    let run = fit(&cfg, &split, &negs, &FitOptions::default())?;
    for e in &run.history {
        println!("epoch {:>2}  loss {:.4}  rec {:.4}  src {:.4}  val {}", e.epoch, e.mean.total, e.mean.rec, e.mean.src, e.val);
    }
    let test = evaluate(&run.model, &run.store, &split, &negs, Partition::Test, cfg.eval_batch)?;
    println!("best epoch {}: test {test}", run.best_epoch);
    Ok(())
}
