//! Grid sweeps over the loss weights λ, α and β.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::fit::{fit, FitOptions};
use crate::datahub::SplitDataset;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalNegatives, MetricTable, Partition};

/// The values each swept weight ranges over.
pub const SWEEP_VALUES: [f64; 5] = [0.01, 0.1, 0.2, 0.5, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub best_epoch: usize,
    pub test: MetricTable,
}

/// Cartesian product; an empty axis keeps the config's own value.
pub fn grid(base: &ExperimentConfig, lambdas: &[f64], alphas: &[f64], betas: &[f64]) -> Vec<SweepPoint> {
    let w = base.weights;
    let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let (ls, als, bs) = (or(lambdas, w.lambda), or(alphas, w.alpha), or(betas, w.beta));
    let mut out = Vec::new();
    for &lambda in &ls {
        for &alpha in &als {
            for &beta in &bs {
                out.push(SweepPoint { lambda, alpha, beta });
            }
        }
    }
    out
}

pub fn point_config(base: &ExperimentConfig, p: SweepPoint) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.weights.lambda = p.lambda;
    cfg.weights.alpha = p.alpha;
    cfg.weights.beta = p.beta;
    cfg
}

/// Thread cap from `CLARDREC_THREADS`, 1 when unset or invalid.
pub fn thread_cap() -> usize {
    std::env::var("CLARDREC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(1)
}

/// One fit per point on the shared split; rows come back in grid order.
/// Each point writes into `out/point_{k}` when `out` is given.
pub fn sweep(
    base: &ExperimentConfig,
    split: &SplitDataset,
    negatives: &EvalNegatives,
    points: &[SweepPoint],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if points.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let fingerprint = split.fingerprint();
    if negatives.fingerprint != fingerprint {
        return Err(Error::Config("evaluation negatives were drawn for a different dataset".into()));
    }
    let run = |(k, p): (usize, &SweepPoint)| -> Result<SweepRow> {
        let cfg = point_config(base, *p);
        if split.fingerprint() != fingerprint {
            return Err(Error::Contract("dataset changed during the sweep".into()));
        }
        let opts = FitOptions {
            out: out.map(|d| d.join(format!("point_{k}"))),
            resume: true,
            halt_after: None,
        };
        let r = fit(&cfg, split, negatives, &opts)?;
        let test = evaluate(&r.model, &r.store, split, negatives, Partition::Test, cfg.eval_batch)?;
        Ok(SweepRow {
            point: *p,
            best_epoch: r.best_epoch,
            test,
        })
    };
    let threads = thread_cap();
    if threads <= 1 {
        return points.iter().enumerate().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| points.par_iter().enumerate().map(run).collect())
}

/// CSV with one row per point.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda,alpha,beta,best_epoch,hr1,hr5,ndcg5,mrr\n");
    for r in rows {
        let p = r.point;
        let t = r.test;
        s.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            p.lambda, p.alpha, p.beta, r.best_epoch, t.hr1, t.hr5, t.ndcg5, t.mrr
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::testutil::toy_split;

    #[test]
    fn grid_sizes() {
        let base = ExperimentConfig::default();
        assert_eq!(grid(&base, &SWEEP_VALUES, &[], &[]).len(), 5);
        assert_eq!(grid(&base, &SWEEP_VALUES, &SWEEP_VALUES, &[0.2]).len(), 25);
        let one = grid(&base, &[], &[], &[]);
        assert_eq!(one, vec![SweepPoint { lambda: 0.1, alpha: 0.1, beta: 0.2 }]);
    }

    #[test]
    fn single_point_equals_a_plain_fit() {
        let split = toy_split(30, 120, 1);
        let negs = EvalNegatives::sample(&split, 0).unwrap();
        let mut base = ExperimentConfig::default();
        base.apply_overrides(&["d_e=4", "d_h=8", "batch_size=64", "max_epochs=2"]).unwrap();
        let rows = sweep(&base, &split, &negs, &grid(&base, &[0.5], &[], &[]), None).unwrap();
        let r = fit(&point_config(&base, rows[0].point), &split, &negs, &FitOptions::default()).unwrap();
        let t = evaluate(&r.model, &r.store, &split, &negs, Partition::Test, 512).unwrap();
        assert_eq!(rows[0].test, t);
        assert_eq!(sweep_csv(&rows).lines().count(), 2);
    }

    #[test]
    fn foreign_negatives_are_refused() {
        let a = toy_split(30, 120, 1);
        let b = toy_split(30, 120, 2);
        let negs = EvalNegatives::sample(&b, 0).unwrap();
        let base = ExperimentConfig::default();
        assert!(sweep(&base, &a, &negs, &grid(&base, &[], &[], &[]), None).is_err());
    }
}
