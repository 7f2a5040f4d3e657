//! Item and user representation export for external projection.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datahub::{shuffle_in_place, SplitDataset};
use crate::error::{Error, Result};
use crate::numcore::checkpoint::write_arrays;
use crate::numcore::{DenseArray, ParameterStore, RandomStream};
use crate::trainer::ClardRec;

/// Raw ids of the exported rows, stored next to the array manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportIds {
    pub items: Vec<String>,
    pub users: Vec<String>,
}

pub fn ids_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("ids.json")
}

fn sample(n: usize, want: usize, stream: &mut RandomStream) -> Vec<u32> {
    let mut all: Vec<u32> = (1..n as u32).collect();
    shuffle_in_place(&mut all, stream);
    all.truncate(want);
    all.sort_unstable();
    all
}

fn rows(table: &DenseArray, ids: &[u32]) -> Result<DenseArray> {
    let d = table.cols();
    let data = ids.iter().flat_map(|i| table.row(*i as usize).iter().copied()).collect();
    DenseArray::matrix(ids.len(), d, data)
}

/// Writes `item/i_src_q`, `item/i_src_u`, `item/i_rec` for up to
/// `n_items` sampled items and `user/u_rec` for up to `n_users` test users.
pub fn export_representations(
    model: &ClardRec,
    store: &ParameterStore,
    split: &SplitDataset,
    n_items: usize,
    n_users: usize,
    seed: u64,
    manifest: &Path,
) -> Result<ExportIds> {
    let mut stream = RandomStream::new("export", seed);
    let items = sample(split.catalog.n_items(), n_items, &mut stream);
    let table = model.item_table(store, &split.catalog, 512)?;
    let mut cases = split.test_cases.clone();
    cases.sort_by_key(|c| c.user);
    cases.dedup_by_key(|c| c.user);
    shuffle_in_place(&mut cases, &mut stream);
    cases.truncate(n_users);
    cases.sort_by_key(|c| c.user);
    let users = model.user_table(store, split, &cases, 512)?;
    let (q, u, r) = (rows(&table.i_q, &items)?, rows(&table.i_u, &items)?, rows(&table.i_rec, &items)?);
    write_arrays(
        manifest,
        [("item/i_src_q", &q), ("item/i_src_u", &u), ("item/i_rec", &r), ("user/u_rec", &users)],
    )?;
    let ids = ExportIds {
        items: items.iter().map(|i| split.catalog.items.name(*i).to_string()).collect(),
        users: cases.iter().map(|c| split.catalog.users.name(c.user).to_string()).collect(),
    };
    let path = ids_path(manifest);
    fs::write(&path, serde_json::to_string_pretty(&ids)?).map_err(|e| Error::io(&path, e))?;
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::checkpoint::read_arrays;
    use crate::trainer::testutil::toy_split;
    use crate::trainer::{ExperimentConfig, ModelSpec};

    #[test]
    fn export_shapes_and_bytes_are_stable() {
        let split = toy_split(30, 200, 5);
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&["d_e=4", "d_h=8"]).unwrap();
        let mut store = ParameterStore::new();
        let model = ClardRec::build(&mut store, ModelSpec::new(&split.catalog, &cfg), cfg.mode(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        let ids = export_representations(&model, &store, &split, 100, 10, 3, &a).unwrap();
        export_representations(&model, &store, &split, 100, 10, 3, &b).unwrap();
        assert_eq!(ids.items.len(), 100);
        assert_eq!(fs::read(a.with_extension("bin")).unwrap(), fs::read(b.with_extension("bin")).unwrap());
        let arrays = read_arrays(&a).unwrap();
        assert_eq!(arrays.len(), 4);
        assert_eq!(arrays[0].1.shape(), &[100, 8]);
        assert_eq!(arrays[3].1.shape(), &[ids.users.len(), 8]);
        assert!(ids_path(&a).exists());
    }
}
