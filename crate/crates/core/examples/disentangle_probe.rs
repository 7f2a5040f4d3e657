//! Trains on synthetic logs with planted general and query factors, then
//! probes how much of each factor the query-removed item view keeps.
//!
//! Usage: `cargo run --release --example disentangle_probe [epochs] [key=value ...]`

use clardrec::datahub::{preprocess, Filters, Scenario};
use clardrec::evalkit::EvalNegatives;
use clardrec::synthgen::{generate, probe_disentanglement, raw_index, SynthConfig};
use clardrec::trainer::{fit, ExperimentConfig, FitOptions};

fn main() -> clardrec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|a| a.parse().ok()).unwrap_or(30);
    let (synth_args, model_args): (Vec<&String>, Vec<&String>) =
        args.iter().skip(1).partition(|a| a.starts_with("synth."));
    let mut synth = serde_json::to_value(SynthConfig {
        n_users: 2000,
        n_items: 5000,
        d_g: 16,
        d_q: 16,
        seed: 7,
        ..SynthConfig::default()
    })?;
    for a in synth_args {
        let (k, v) = a["synth.".len()..].split_once('=').expect("synth.key=value");
        synth[k] = serde_json::from_str(v)?;
    }
    let synth: SynthConfig = serde_json::from_value(synth)?;
    let data = generate(&synth)?;
    let ing = data.ingest()?;
    let split = preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), 0)?;
    let negs = EvalNegatives::sample(&split, 0)?;
    println!("{} rec / {} src clicks", data.rec_clicks, data.src_clicks);

    for extra in [&["convention=as-written"][..], &["convention=motivation"], &["ablations=CD"]] {
        let mut cfg = ExperimentConfig::preset("kuaisar/mlp")?;
        cfg.apply_overrides(&[format!("max_epochs={epochs}"), "batch_size=1024".into()])?;
        cfg.apply_overrides(extra)?;
        cfg.apply_overrides(&model_args)?;
        let run = fit(&cfg, &split, &negs, &FitOptions::default())?;
        let last = &run.history[run.history.len() - 1].mean;
        for (which, store) in [("best", &run.store), ("last", &run.last)] {
            let table = run.model.item_table(store, &split.catalog, 512)?;
            let reprs: Vec<(usize, Vec<f32>)> = (1..split.catalog.n_items() as u32)
                .filter_map(|i| Some((raw_index(split.catalog.items.name(i))?, table.i_q.row(i as usize).to_vec())))
                .collect();
            let p = probe_disentanglement(&reprs, &data.truth)?;
            println!(
                "{:<24} {which} (epoch {:>2})  src {:.3}  R2 general {:.3}  R2 query {:.3}  gap {:+.3}",
                extra.join(" "),
                if which == "best" { run.best_epoch } else { run.history.len() },
                last.src,
                p.r2_general,
                p.r2_query,
                p.gap()
            );
        }
    }
    Ok(())
}
