//! Prints the shipped hyper-parameter presets.
//!
//! Usage: `cargo run --example presets [dataset/backbone]`

use clardrec::trainer::{ExperimentConfig, PRESETS};

fn main() -> clardrec::Result<()> {
    match std::env::args().nth(1) {
        Some(name) => print!("{}", ExperimentConfig::preset(&name)?.to_text()),
        None => {
            for (name, _) in PRESETS {
                let c = ExperimentConfig::preset(name)?;
                let mut line = format!("{name:<14}");
                for key in ["lr", "batch_size", "l_b", "l_e", "lambda", "alpha", "beta", "gamma"] {
                    line.push_str(&format!(" {key}={:<6}", c.get(key)?));
                }
                println!("{}", line.trim_end());
            }
        }
    }
    Ok(())
}
