//! Train/validation/test splitting for the two scenarios.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::records::{Catalog, Domain, InteractionRecord};
use crate::error::{Error, Result};
use crate::numcore::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Cf,
    Sequential,
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cf" => Ok(Scenario::Cf),
            "sequential" | "seq" => Ok(Scenario::Sequential),
            _ => Err(Error::Config(format!("unknown scenario `{s}` (cf, sequential)"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Cf => "cf",
            Scenario::Sequential => "sequential",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filters {
    /// Sequential users with fewer search clicks are dropped.
    pub min_src_interactions: usize,
    /// Most recent clicks kept per user and domain (sequential).
    pub max_history: usize,
    /// Sequential users with fewer recommendation clicks are excluded.
    pub min_rec_interactions: usize,
}

impl Default for Filters {
    fn default() -> Self {
        Self {
            min_src_interactions: 10,
            max_history: 100,
            min_rec_interactions: 3,
        }
    }
}

/// A training target or evaluation case. In the sequential scenario
/// `rec_hist` / `src_hist` count the leading entries of the user's
/// time-ordered sequences that are visible to the encoders; both are 0 in
/// the collaborative-filtering scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub user: u32,
    pub item: u32,
    pub query: u32,
    pub rec_hist: u32,
    pub src_hist: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub input_records: usize,
    pub retained_records: usize,
    /// Sequential users removed for having too few search clicks.
    pub dropped_few_src_users: usize,
    /// Sequential users excluded for having too few recommendation clicks.
    pub excluded_short_users: usize,
    /// Clicks removed by the history-length cap.
    pub truncated_records: usize,
    /// Sequential targets skipped because no earlier history exists.
    pub targets_without_history: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitDataset {
    pub scenario: Scenario,
    pub catalog: Catalog,
    pub train: Vec<InteractionRecord>,
    pub val: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub rec_train: Vec<Example>,
    pub src_train: Vec<Example>,
    pub val_cases: Vec<Example>,
    pub test_cases: Vec<Example>,
    /// Per-user time-ordered recommendation items (sequential only).
    pub rec_seq: Vec<Vec<u32>>,
    /// Per-user time-ordered `(item, query)` search clicks (sequential only).
    pub src_seq: Vec<Vec<(u32, u32)>>,
    pub max_history: usize,
    pub stats: SplitStats,
}

fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = (n as f64 * 0.1).round() as usize;
    let test = (n as f64 * 0.1).round() as usize;
    (n - val - test, val, test)
}

fn shuffle<T>(v: &mut [T], stream: &mut RandomStream) {
    for i in (1..v.len()).rev() {
        let j = stream.below(i as u64 + 1) as usize;
        v.swap(i, j);
    }
}

pub(crate) fn shuffle_in_place<T>(v: &mut [T], stream: &mut RandomStream) {
    shuffle(v, stream);
}

fn flat(r: &InteractionRecord) -> Example {
    Example {
        user: r.user,
        item: r.item,
        query: r.query,
        rec_hist: 0,
        src_hist: 0,
    }
}

/// Splits records per the chosen scenario. The collaborative-filtering split
/// shuffles each domain with the `shuffle` stream of `seed` and cuts it
/// 8:1:1; only recommendation clicks form evaluation cases.
pub fn preprocess(
    catalog: Catalog,
    records: &[InteractionRecord],
    scenario: Scenario,
    filters: Filters,
    seed: u64,
) -> Result<SplitDataset> {
    if records.is_empty() {
        return Err(Error::Contract("preprocess needs at least one record".into()));
    }
    match scenario {
        Scenario::Cf => Ok(split_cf(catalog, records, filters, seed)),
        Scenario::Sequential => split_sequential(catalog, records, filters),
    }
}

fn split_cf(catalog: Catalog, records: &[InteractionRecord], filters: Filters, seed: u64) -> SplitDataset {
    let mut stream = RandomStream::new("shuffle", seed);
    let mut out = SplitDataset {
        scenario: Scenario::Cf,
        catalog,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        rec_train: Vec::new(),
        src_train: Vec::new(),
        val_cases: Vec::new(),
        test_cases: Vec::new(),
        rec_seq: Vec::new(),
        src_seq: Vec::new(),
        max_history: filters.max_history,
        stats: SplitStats {
            input_records: records.len(),
            retained_records: records.len(),
            ..SplitStats::default()
        },
    };
    for domain in [Domain::Rec, Domain::Src] {
        let mut part: Vec<InteractionRecord> =
            records.iter().filter(|r| r.domain == domain).cloned().collect();
        shuffle(&mut part, &mut stream);
        let (n_train, n_val, _) = split_counts(part.len());
        let test = part.split_off(n_train + n_val);
        let val = part.split_off(n_train);
        let train = part;
        match domain {
            Domain::Rec => {
                out.rec_train = train.iter().map(flat).collect();
                out.val_cases = val.iter().map(flat).collect();
                out.test_cases = test.iter().map(flat).collect();
            }
            Domain::Src => out.src_train = train.iter().map(flat).collect(),
        }
        out.train.extend(train);
        out.val.extend(val);
        out.test.extend(test);
    }
    out
}

fn split_sequential(
    catalog: Catalog,
    records: &[InteractionRecord],
    filters: Filters,
) -> Result<SplitDataset> {
    let n_users = catalog.n_users();
    let mut per_user: Vec<Vec<(usize, &InteractionRecord)>> = vec![Vec::new(); n_users];
    for (k, r) in records.iter().enumerate() {
        per_user
            .get_mut(r.user as usize)
            .ok_or_else(|| Error::Lookup(format!("user {} outside catalog", r.user)))?
            .push((k, r));
    }
    let mut stats = SplitStats {
        input_records: records.len(),
        ..SplitStats::default()
    };
    let mut out = SplitDataset {
        scenario: Scenario::Sequential,
        catalog,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        rec_train: Vec::new(),
        src_train: Vec::new(),
        val_cases: Vec::new(),
        test_cases: Vec::new(),
        rec_seq: vec![Vec::new(); n_users],
        src_seq: vec![Vec::new(); n_users],
        max_history: filters.max_history,
        stats: SplitStats::default(),
    };
    for (user, mut clicks) in per_user.into_iter().enumerate() {
        if clicks.is_empty() {
            continue;
        }
        clicks.sort_by_key(|(k, r)| (r.timestamp, *k));
        let mut rec: Vec<&InteractionRecord> = Vec::new();
        let mut src: Vec<&InteractionRecord> = Vec::new();
        for (_, r) in &clicks {
            match r.domain {
                Domain::Rec => rec.push(r),
                Domain::Src => src.push(r),
            }
        }
        if src.len() < filters.min_src_interactions {
            stats.dropped_few_src_users += 1;
            continue;
        }
        for seq in [&mut rec, &mut src] {
            if seq.len() > filters.max_history {
                let cut = seq.len() - filters.max_history;
                stats.truncated_records += cut;
                seq.drain(..cut);
            }
        }
        if rec.len() < filters.min_rec_interactions.max(3) {
            stats.excluded_short_users += 1;
            continue;
        }
        let u = user as u32;
        let n = rec.len();
        out.rec_seq[user] = rec.iter().map(|r| r.item).collect();
        out.src_seq[user] = src.iter().map(|r| (r.item, r.query)).collect();
        let case = |pos: usize| Example {
            user: u,
            item: rec[pos].item,
            query: 0,
            rec_hist: pos as u32,
            src_hist: 0,
        };
        out.test_cases.push(case(n - 1));
        out.val_cases.push(case(n - 2));
        out.test.push(rec[n - 1].clone());
        out.val.push(rec[n - 2].clone());
        for pos in 0..n - 2 {
            out.train.push(rec[pos].clone());
            if pos == 0 {
                stats.targets_without_history += 1;
            } else {
                out.rec_train.push(case(pos));
            }
        }
        let train_rec_times: Vec<i64> = rec[..n - 2].iter().map(|r| r.timestamp).collect();
        for (pos, r) in src.iter().enumerate() {
            out.train.push((*r).clone());
            let rec_hist = train_rec_times.partition_point(|t| *t < r.timestamp);
            if pos == 0 || rec_hist == 0 {
                stats.targets_without_history += 1;
                continue;
            }
            out.src_train.push(Example {
                user: u,
                item: r.item,
                query: r.query,
                rec_hist: rec_hist as u32,
                src_hist: pos as u32,
            });
        }
    }
    stats.retained_records = out.train.len() + out.val.len() + out.test.len();
    out.stats = stats;
    if out.test_cases.is_empty() {
        return Err(Error::Config(
            "no user survives the sequential filters".into(),
        ));
    }
    Ok(out)
}

impl SplitDataset {
    /// Visible recommendation history of an example, most recent
    /// `max_history` items.
    pub fn rec_history(&self, ex: &Example) -> &[u32] {
        let seq = &self.rec_seq[ex.user as usize];
        let end = (ex.rec_hist as usize).min(seq.len());
        &seq[end.saturating_sub(self.max_history)..end]
    }

    pub fn src_history(&self, ex: &Example) -> &[(u32, u32)] {
        let seq = &self.src_seq[ex.user as usize];
        let end = (ex.src_hist as usize).min(seq.len());
        &seq[end.saturating_sub(self.max_history)..end]
    }

    /// Copy in which search clicks become extra recommendation positives
    /// (queries dropped, `(user, item)` pairs deduplicated) and the search
    /// part is emptied.
    pub fn with_search_as_rec(&self) -> SplitDataset {
        let mut out = self.clone();
        let mut seen: HashSet<(u32, u32)> =
            out.rec_train.iter().map(|e| (e.user, e.item)).collect();
        for e in &self.src_train {
            if seen.insert((e.user, e.item)) {
                out.rec_train.push(Example {
                    query: 0,
                    src_hist: 0,
                    ..*e
                });
            }
        }
        out.src_train.clear();
        out
    }

    /// Identity of the split: SHA-256 over scenario, catalog sizes and every
    /// partition.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.scenario.to_string().as_bytes());
        for n in [self.catalog.n_users(), self.catalog.n_items(), self.catalog.n_words()] {
            h.update((n as u64).to_le_bytes());
        }
        for part in [&self.rec_train, &self.src_train, &self.val_cases, &self.test_cases] {
            h.update((part.len() as u64).to_le_bytes());
            for e in part.iter() {
                for v in [e.user, e.item, e.query, e.rec_hist, e.src_hist] {
                    h.update(v.to_le_bytes());
                }
            }
        }
        for seq in &self.rec_seq {
            h.update((seq.len() as u64).to_le_bytes());
            for v in seq {
                h.update(v.to_le_bytes());
            }
        }
        for seq in &self.src_seq {
            h.update((seq.len() as u64).to_le_bytes());
            for (a, b) in seq {
                h.update(a.to_le_bytes());
                h.update(b.to_le_bytes());
            }
        }
        crate::numcore::hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::records::Vocab;

    pub(crate) fn catalog(n_users: usize, n_items: usize) -> Catalog {
        let mut users = Vocab::new();
        let mut items = Vocab::new();
        for u in 1..n_users {
            users.intern(&format!("u{u}"));
        }
        for i in 1..n_items {
            items.intern(&format!("i{i}"));
        }
        Catalog {
            users,
            items,
            words: Vocab::new(),
            queries: vec![Vec::new(), Vec::new()],
            query_text: Vocab::new(),
            user_attrs: vec![Vec::new(); n_users],
            item_attrs: vec![Vec::new(); n_items],
            user_attr_vocabs: Vec::new(),
            item_attr_vocabs: Vec::new(),
        }
    }

    fn rec(user: u32, item: u32, t: i64) -> InteractionRecord {
        InteractionRecord {
            user,
            item,
            timestamp: t,
            domain: Domain::Rec,
            query: 0,
        }
    }

    fn src(user: u32, item: u32, t: i64) -> InteractionRecord {
        InteractionRecord {
            domain: Domain::Src,
            query: 1,
            ..rec(user, item, t)
        }
    }

    #[test]
    fn cf_ten_records_split_eight_one_one() {
        let records: Vec<_> = (0..10).map(|k| rec(1, 1 + k as u32, k)).collect();
        let s = preprocess(catalog(2, 12), &records, Scenario::Cf, Filters::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn sequential_leave_one_out() {
        let mut records: Vec<_> = ["a", "b", "c", "d"]
            .iter()
            .enumerate()
            .map(|(k, _)| rec(1, 1 + k as u32, 100 + k as i64))
            .collect();
        records.extend((0..10).map(|k| src(1, 5, k)));
        let s = preprocess(
            catalog(2, 8),
            &records,
            Scenario::Sequential,
            Filters::default(),
            0,
        )
        .unwrap();
        assert_eq!(s.test_cases[0].item, 4);
        assert_eq!(s.val_cases[0].item, 3);
        let train_rec: Vec<u32> = s
            .train
            .iter()
            .filter(|r| r.domain == Domain::Rec)
            .map(|r| r.item)
            .collect();
        assert_eq!(train_rec, vec![1, 2]);
        assert_eq!(s.rec_history(&s.test_cases[0]), &[1, 2, 3]);
    }

    #[test]
    fn sequential_drops_users_with_nine_searches() {
        let mut records: Vec<_> = (0..5).map(|k| rec(1, 1 + k, 100 + k as i64)).collect();
        records.extend((0..9).map(|k| src(1, 5, k)));
        records.extend((0..5).map(|k| rec(2, 1 + k, 100 + k as i64)));
        records.extend((0..10).map(|k| src(2, 5, k)));
        let s = preprocess(
            catalog(3, 8),
            &records,
            Scenario::Sequential,
            Filters::default(),
            0,
        )
        .unwrap();
        assert_eq!(s.stats.dropped_few_src_users, 1);
        assert!(s.test_cases.iter().all(|e| e.user == 2));
    }

    #[test]
    fn short_users_are_counted_not_fatal() {
        let mut records: Vec<_> = (0..2).map(|k| rec(1, 1 + k, 100 + k as i64)).collect();
        records.extend((0..10).map(|k| src(1, 5, k)));
        records.extend((0..4).map(|k| rec(2, 1 + k, 100 + k as i64)));
        records.extend((0..10).map(|k| src(2, 5, k)));
        let s = preprocess(
            catalog(3, 8),
            &records,
            Scenario::Sequential,
            Filters::default(),
            0,
        )
        .unwrap();
        assert_eq!(s.stats.excluded_short_users, 1);
    }

    #[test]
    fn search_clicks_merge_as_positives() {
        let mut records: Vec<_> = (0..100).map(|k| rec(1 + k % 3, 1 + k, k as i64)).collect();
        records.extend((0..40).map(|k| src(1, 200 + k, k as i64)));
        let s = preprocess(catalog(4, 260), &records, Scenario::Cf, Filters::default(), 3).unwrap();
        let merged = s.with_search_as_rec();
        assert_eq!(merged.rec_train.len(), s.rec_train.len() + s.src_train.len());
        assert!(merged.src_train.is_empty());
    }
}
