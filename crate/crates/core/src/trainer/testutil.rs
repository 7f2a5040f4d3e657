use crate::datahub::{preprocess, Filters, Scenario, SplitDataset};
use crate::synthgen::{generate, SynthConfig};

pub(crate) fn toy_config(n_users: usize, n_items: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_users,
        n_items,
        n_queries: n_users * 3,
        d_g: 3,
        d_q: 3,
        click_bias: -1.5,
        impressions: 10,
        seed,
        ..SynthConfig::default()
    }
}

pub(crate) fn toy_split(n_users: usize, n_items: usize, seed: u64) -> SplitDataset {
    let data = generate(&toy_config(n_users, n_items, seed)).unwrap();
    let ing = data.ingest().unwrap();
    preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), seed).unwrap()
}

pub(crate) fn toy_seq_split(n_users: usize, n_items: usize, seed: u64) -> SplitDataset {
    let data = generate(&toy_config(n_users, n_items, seed)).unwrap();
    let ing = data.ingest().unwrap();
    let filters = Filters {
        min_src_interactions: 2,
        ..Filters::default()
    };
    preprocess(ing.catalog, &ing.records, Scenario::Sequential, filters, seed).unwrap()
}
