//! Grid over the search-loss weight and the disentangling weight, one
//! training run per point.
//!
//! Usage: `cargo run --release --example hyperparameter_sweep`

use clardrec::datahub::{preprocess, Filters, Scenario};
use clardrec::evalkit::EvalNegatives;
use clardrec::synthgen::{generate, SynthConfig};
use clardrec::trainer::{grid, sweep, sweep_csv, ExperimentConfig};

fn main() -> clardrec::Result<()> {
    let synth = SynthConfig {
        n_users: 600,
        n_items: 300,
        d_g: 4,
        d_q: 4,
        ..SynthConfig::default()
    };
    let ing = generate(&synth)?.ingest()?;
    let split = preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), 0)?;
    let negs = EvalNegatives::sample(&split, 0)?;

    let mut base = ExperimentConfig::preset("kuaisar/mlp")?;
    base.apply_overrides(&["batch_size=256", "max_epochs=5"])?;
    let points = grid(&base, &[0.01, 0.1, 1.0], &[0.1, 0.5], &[]);
    let rows = sweep(&base, &split, &negs, &points, None)?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}
