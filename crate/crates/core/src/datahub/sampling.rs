//! Negative sampling under the per-context exclusion rules.

use std::collections::{HashMap, HashSet};

use super::preprocess::SplitDataset;
use super::records::Domain;
use crate::error::{Error, Result};
use crate::numcore::RandomStream;

/// Number of negatives drawn for every evaluation case.
pub const EVAL_NEGATIVES: usize = 99;

/// Click sets that sampled negatives must avoid.
#[derive(Clone, Debug)]
pub struct NegativeIndex {
    n_items: usize,
    /// Training recommendation clicks per user.
    rec_train: Vec<HashSet<u32>>,
    /// Training search clicks per query id.
    query_items: HashMap<u32, HashSet<u32>>,
    /// Every click of the user, any domain, any split.
    all_clicked: Vec<HashSet<u32>>,
}

impl NegativeIndex {
    pub fn new(split: &SplitDataset) -> Self {
        let n_users = split.catalog.n_users();
        let mut rec_train = vec![HashSet::new(); n_users];
        let mut query_items: HashMap<u32, HashSet<u32>> = HashMap::new();
        let mut all_clicked = vec![HashSet::new(); n_users];
        for r in &split.train {
            match r.domain {
                Domain::Rec => {
                    rec_train[r.user as usize].insert(r.item);
                }
                Domain::Src => {
                    query_items.entry(r.query).or_default().insert(r.item);
                }
            }
        }
        for r in split.train.iter().chain(&split.val).chain(&split.test) {
            all_clicked[r.user as usize].insert(r.item);
        }
        Self {
            n_items: split.catalog.n_items(),
            rec_train,
            query_items,
            all_clicked,
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn rec_excluded(&self, user: u32) -> &HashSet<u32> {
        &self.rec_train[user as usize]
    }

    pub fn query_excluded(&self, query: u32) -> Option<&HashSet<u32>> {
        self.query_items.get(&query)
    }

    pub fn all_clicked(&self, user: u32) -> &HashSet<u32> {
        &self.all_clicked[user as usize]
    }

    pub fn sample_rec(&self, user: u32, positive: u32, m: usize, stream: &mut RandomStream) -> Result<Vec<u32>> {
        sample_negatives(self.n_items, &[self.rec_excluded(user)], positive, m, stream, user)
    }

    pub fn sample_src(
        &self,
        user: u32,
        query: u32,
        positive: u32,
        m: usize,
        stream: &mut RandomStream,
    ) -> Result<Vec<u32>> {
        let empty = HashSet::new();
        let ex = self.query_excluded(query).unwrap_or(&empty);
        sample_negatives(self.n_items, &[ex], positive, m, stream, user)
    }

    /// The 99 evaluation negatives: never clicked by the user anywhere.
    pub fn sample_eval(&self, user: u32, positive: u32, stream: &mut RandomStream) -> Result<Vec<u32>> {
        sample_negatives(
            self.n_items,
            &[self.all_clicked(user)],
            positive,
            EVAL_NEGATIVES,
            stream,
            user,
        )
    }
}

/// `m` distinct items drawn uniformly from `1..n_items`, excluding the
/// positive and every item in `excluded`.
pub fn sample_negatives(
    n_items: usize,
    excluded: &[&HashSet<u32>],
    positive: u32,
    m: usize,
    stream: &mut RandomStream,
    user: u32,
) -> Result<Vec<u32>> {
    let blocked = |i: u32| i == positive || excluded.iter().any(|s| s.contains(&i));
    let universe = n_items.saturating_sub(1);
    let mut n_blocked = excluded.iter().map(|s| s.len()).sum::<usize>() + 1;
    if n_blocked >= universe / 2 {
        n_blocked = (1..n_items as u32).filter(|&i| blocked(i)).count();
    }
    let pool = universe.saturating_sub(n_blocked);
    if pool < m {
        return Err(Error::Sampling(format!(
            "user {user}: only {pool} candidate negatives for {m} requested"
        )));
    }
    if pool < 4 * m {
        let mut cands: Vec<u32> = (1..n_items as u32).filter(|&i| !blocked(i)).collect();
        for k in 0..m {
            let j = k + stream.below((cands.len() - k) as u64) as usize;
            cands.swap(k, j);
        }
        cands.truncate(m);
        return Ok(cands);
    }
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let i = 1 + stream.below(universe as u64) as u32;
        if !blocked(i) && !out.contains(&i) {
            out.push(i);
        }
    }
    Ok(out)
}
