//! Ranking evaluation with sampled negatives, metric tables and
//! representation export.

mod export;
mod metrics;
mod ranking;

pub use export::{export_representations, ids_path, ExportIds};
pub use metrics::{compute_metrics, median, median_table, rank_of, render_table, MetricTable, RankedCase, METRIC_NAMES};
pub use ranking::{cases, evaluate, rank_partition, score_cases, EvalNegatives, Partition};
