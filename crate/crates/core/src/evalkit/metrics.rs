//! Rank-based metrics over single-positive cases.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One ranked evaluation case. `scores[0]` belongs to the positive, the
/// rest follow the negatives in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCase {
    pub user: u32,
    pub positive: u32,
    pub negatives: Vec<u32>,
    pub scores: Vec<f32>,
    pub rank: usize,
}

/// 1 plus the number of negatives scoring at or above the positive.
/// Ties count against the positive, so a constant scorer ranks last.
pub fn rank_of(scores: &[f32]) -> usize {
    let pos = scores[0];
    1 + scores[1..].iter().filter(|s| **s >= pos).count()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub hr1: f64,
    pub hr5: f64,
    pub ndcg5: f64,
    pub mrr: f64,
    pub cases: usize,
}

pub const METRIC_NAMES: [&str; 4] = ["HR@1", "HR@5", "NDCG@5", "MRR"];

impl MetricTable {
    pub fn values(&self) -> [f64; 4] {
        [self.hr1, self.hr5, self.ndcg5, self.mrr]
    }

    pub fn get(&self, metric: crate::trainer::ValMetric) -> f64 {
        use crate::trainer::ValMetric::*;
        match metric {
            Hr1 => self.hr1,
            Hr5 => self.hr5,
            Ndcg5 => self.ndcg5,
            Mrr => self.mrr,
        }
    }
}

impl fmt::Display for MetricTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "HR@1 {:.4}  HR@5 {:.4}  NDCG@5 {:.4}  MRR {:.4}  ({} cases)",
            self.hr1, self.hr5, self.ndcg5, self.mrr, self.cases
        )
    }
}

pub fn compute_metrics(ranks: &[usize]) -> Result<MetricTable> {
    if ranks.is_empty() {
        return Err(Error::Contract("metrics need at least one case".into()));
    }
    let n = ranks.len() as f64;
    let mut t = MetricTable {
        cases: ranks.len(),
        ..MetricTable::default()
    };
    for &r in ranks {
        if r == 0 {
            return Err(Error::Contract("ranks start at 1".into()));
        }
        let rf = r as f64;
        if r <= 1 {
            t.hr1 += 1.0;
        }
        if r <= 5 {
            t.hr5 += 1.0;
            t.ndcg5 += 1.0 / (rf + 1.0).log2();
        }
        t.mrr += 1.0 / rf;
    }
    t.hr1 /= n;
    t.hr5 /= n;
    t.ndcg5 /= n;
    t.mrr /= n;
    Ok(t)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Metric-wise median across seeds.
pub fn median_table(tables: &[MetricTable]) -> Option<MetricTable> {
    let col = |f: fn(&MetricTable) -> f64| median(&tables.iter().map(f).collect::<Vec<_>>());
    Some(MetricTable {
        hr1: col(|t| t.hr1)?,
        hr5: col(|t| t.hr5)?,
        ndcg5: col(|t| t.ndcg5)?,
        mrr: col(|t| t.mrr)?,
        cases: tables.iter().map(|t| t.cases).max()?,
    })
}

/// Aligned text table with a label column.
pub fn render_table(rows: &[(String, MetricTable)]) -> String {
    let w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<w$}", "run");
    for name in METRIC_NAMES {
        let _ = write!(s, "  {name:>8}");
    }
    s.push('\n');
    for (label, t) in rows {
        let _ = write!(s, "{label:<w$}");
        for v in t.values() {
            let _ = write!(s, "  {v:>8.4}");
        }
        s.push('\n');
    }
    s
}
