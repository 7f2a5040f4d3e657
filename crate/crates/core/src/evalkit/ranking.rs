//! Scoring of evaluation cases against their cached negatives.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, rank_of, MetricTable, RankedCase};
use crate::datahub::{Example, NegativeIndex, SplitDataset, EVAL_NEGATIVES};
use crate::error::{Error, Result};
use crate::numcore::{DenseArray, ParameterStore, RandomStream};
use crate::trainer::ClardRec;

/// The 99 negatives of every validation and test case, drawn once per
/// (dataset, seed) so every variant ranks the same candidates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalNegatives {
    pub fingerprint: String,
    pub seed: u64,
    pub val: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Val,
    Test,
}

impl EvalNegatives {
    pub fn sample(split: &SplitDataset, seed: u64) -> Result<Self> {
        let index = NegativeIndex::new(split);
        let mut stream = RandomStream::new("eval", seed);
        let mut draw = |cases: &[Example]| -> Result<Vec<Vec<u32>>> {
            cases
                .iter()
                .map(|c| index.sample_eval(c.user, c.item, &mut stream))
                .collect()
        };
        let val = draw(&split.val_cases)?;
        let test = draw(&split.test_cases)?;
        Ok(Self {
            fingerprint: split.fingerprint(),
            seed,
            val,
            test,
        })
    }

    /// Reads the cache at `path` when it matches the split and seed, else
    /// samples and writes it.
    pub fn load_or_sample(path: &Path, split: &SplitDataset, seed: u64) -> Result<Self> {
        if let Ok(text) = fs::read_to_string(path) {
            if let Ok(cached) = serde_json::from_str::<Self>(&text) {
                if cached.seed == seed && cached.fingerprint == split.fingerprint() {
                    return Ok(cached);
                }
                log::warn!("evaluation negatives at {} belong to another split; resampling", path.display());
            }
        }
        let fresh = Self::sample(split, seed)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, serde_json::to_string(&fresh)?).map_err(|e| Error::io(path, e))?;
        Ok(fresh)
    }

    pub fn part(&self, p: Partition) -> &[Vec<u32>] {
        match p {
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

pub fn cases(split: &SplitDataset, p: Partition) -> &[Example] {
    match p {
        Partition::Val => &split.val_cases,
        Partition::Test => &split.test_cases,
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum::<f64>() as f32
}

/// Ranks each case's positive among its negatives given precomputed user
/// rows (aligned with `cases`) and the item scoring table.
pub fn score_cases(
    users: &DenseArray,
    items: &DenseArray,
    cases: &[Example],
    negatives: &[Vec<u32>],
) -> Result<Vec<RankedCase>> {
    if cases.len() != negatives.len() || users.rows() != cases.len() {
        return Err(Error::Contract(format!(
            "{} cases, {} negative lists, {} user rows",
            cases.len(),
            negatives.len(),
            users.rows()
        )));
    }
    cases
        .iter()
        .zip(negatives)
        .enumerate()
        .map(|(k, (c, negs))| {
            if negs.len() != EVAL_NEGATIVES {
                return Err(Error::Contract(format!(
                    "case {k} has {} negatives, expected {EVAL_NEGATIVES}",
                    negs.len()
                )));
            }
            let u = users.row(k);
            let scores: Vec<f32> = std::iter::once(c.item)
                .chain(negs.iter().copied())
                .map(|i| dot(u, items.row(i as usize)))
                .collect();
            Ok(RankedCase {
                user: c.user,
                positive: c.item,
                negatives: negs.clone(),
                rank: rank_of(&scores),
                scores,
            })
        })
        .collect()
}

/// Ranked cases of one partition under the model's scoring path.
pub fn rank_partition(
    model: &ClardRec,
    store: &ParameterStore,
    split: &SplitDataset,
    negatives: &EvalNegatives,
    p: Partition,
    chunk: usize,
) -> Result<Vec<RankedCase>> {
    let table = model.item_table(store, &split.catalog, chunk)?;
    let cs = cases(split, p);
    let users = model.user_table(store, split, cs, chunk)?;
    score_cases(&users, &table.score, cs, negatives.part(p))
}

pub fn evaluate(
    model: &ClardRec,
    store: &ParameterStore,
    split: &SplitDataset,
    negatives: &EvalNegatives,
    p: Partition,
    chunk: usize,
) -> Result<MetricTable> {
    let ranked = rank_partition(model, store, split, negatives, p, chunk)?;
    compute_metrics(&ranked.iter().map(|c| c.rank).collect::<Vec<_>>())
}
