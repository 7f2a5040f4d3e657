//! Click-log ingestion, preprocessing into splits, negative sampling and
//! joint batches.

mod batches;
mod ingest;
mod preprocess;
mod records;
mod sampling;

pub use batches::{BatchPlanner, TrainBatch, Tuple};
pub use ingest::{ingest, ingest_sources, IngestOptions, IngestReport, Ingested};
pub(crate) use preprocess::shuffle_in_place;
pub use preprocess::{preprocess, Example, Filters, Scenario, SplitDataset, SplitStats};
pub use records::{Catalog, Domain, InteractionRecord, Vocab};
pub use sampling::{sample_negatives, NegativeIndex, EVAL_NEGATIVES};
