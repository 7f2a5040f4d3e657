//! Joint recommendation/search mini-batches.

use serde::{Deserialize, Serialize};

use super::preprocess::{shuffle_in_place, Example, SplitDataset};
use super::sampling::NegativeIndex;
use crate::error::{Error, Result};
use crate::numcore::RandomStream;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tuple {
    pub example: Example,
    pub negatives: Vec<u32>,
}

/// One step's worth of data: equally many recommendation and search tuples
/// (the search part is empty when there is no search data).
#[derive(Clone, Debug, Default)]
pub struct TrainBatch {
    pub rec: Vec<Tuple>,
    pub src: Vec<Tuple>,
}

/// Produces epochs of batches. Its state (stream counters and the search
/// pool cursor) is serializable so training can resume exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchPlanner {
    pub batch_size: usize,
    pub negatives: usize,
    shuffle: RandomStream,
    neg: RandomStream,
    src_order: Vec<u32>,
    src_cursor: usize,
    warned_empty_src: bool,
}

impl BatchPlanner {
    pub fn new(batch_size: usize, negatives: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || negatives == 0 {
            return Err(Error::Config("batch size and negatives must be positive".into()));
        }
        Ok(Self {
            batch_size,
            negatives,
            shuffle: RandomStream::new("shuffle/batches", seed),
            neg: RandomStream::new("neg", seed),
            src_order: Vec::new(),
            src_cursor: 0,
            warned_empty_src: false,
        })
    }

    pub fn steps_per_epoch(&self, split: &SplitDataset) -> usize {
        split.rec_train.len().div_ceil(self.batch_size)
    }

    fn next_src(&mut self, n_src: usize) -> usize {
        if self.src_cursor >= self.src_order.len() {
            self.src_order = (0..n_src as u32).collect();
            shuffle_in_place(&mut self.src_order, &mut self.shuffle);
            self.src_cursor = 0;
        }
        self.src_cursor += 1;
        self.src_order[self.src_cursor - 1] as usize
    }

    /// All batches of the next epoch.
    pub fn epoch(&mut self, split: &SplitDataset, index: &NegativeIndex) -> Result<Vec<TrainBatch>> {
        if split.rec_train.is_empty() {
            return Err(Error::Config("no recommendation training data".into()));
        }
        let n_src = split.src_train.len();
        if n_src == 0 && !self.warned_empty_src {
            log::warn!("search training set is empty; batches carry recommendation tuples only");
            self.warned_empty_src = true;
        }
        let mut order: Vec<u32> = (0..split.rec_train.len() as u32).collect();
        shuffle_in_place(&mut order, &mut self.shuffle);
        let mut batches = Vec::with_capacity(self.steps_per_epoch(split));
        for chunk in order.chunks(self.batch_size) {
            let mut batch = TrainBatch::default();
            for &k in chunk {
                let ex = split.rec_train[k as usize];
                let negatives = index.sample_rec(ex.user, ex.item, self.negatives, &mut self.neg)?;
                batch.rec.push(Tuple { example: ex, negatives });
            }
            if n_src > 0 {
                for _ in 0..chunk.len() {
                    let ex = split.src_train[self.next_src(n_src)];
                    let negatives =
                        index.sample_src(ex.user, ex.query, ex.item, self.negatives, &mut self.neg)?;
                    batch.src.push(Tuple { example: ex, negatives });
                }
            }
            batches.push(batch);
        }
        Ok(batches)
    }
}
