//! Shipped hyper-parameter presets, one per dataset and backbone.

use crate::error::{Error, Result};

pub const PRESETS: [(&str, &str); 8] = [
    ("kuaisar/mlp", include_str!("../../../../presets/kuaisar/mlp.cfg")),
    ("kuaisar/mmoe", include_str!("../../../../presets/kuaisar/mmoe.cfg")),
    ("kuaisar/gru", include_str!("../../../../presets/kuaisar/gru.cfg")),
    ("kuaisar/sas", include_str!("../../../../presets/kuaisar/sas.cfg")),
    ("ecom/mlp", include_str!("../../../../presets/ecom/mlp.cfg")),
    ("ecom/mmoe", include_str!("../../../../presets/ecom/mmoe.cfg")),
    ("ecom/gru", include_str!("../../../../presets/ecom/gru.cfg")),
    ("ecom/sas", include_str!("../../../../presets/ecom/sas.cfg")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    let key = name.trim_end_matches(".cfg");
    PRESETS
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown preset `{name}`; shipped: {}", known.join(", ")))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::ExperimentConfig;

    #[test]
    fn every_preset_parses_and_validates() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn kuaisar_mlp_values() {
        let c = ExperimentConfig::preset("kuaisar/mlp").unwrap();
        assert_eq!((c.lr, c.batch_size, c.encoder.l_b, c.encoder.l_e), (0.005, 4096, 3, 3));
        let w = c.weights;
        assert_eq!((w.lambda, w.alpha, w.beta, w.gamma), (0.1, 0.1, 0.2, 0.5));
    }
}
