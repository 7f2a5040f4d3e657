use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::array::DenseArray;
use super::rng::RandomStream;
use crate::error::{Error, Result};

/// Index of an entry in a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: DenseArray,
    pub grad: DenseArray,
    pub trainable: bool,
}

/// Named trainable arrays with paired gradient slots.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, ParamId>,
}

/// Gradients produced by one backward pass, indexed by [`ParamId`].
#[derive(Debug, Default)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<DenseArray>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&DenseArray> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: DenseArray, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.entries.len());
        let grad = DenseArray::zeros(value.shape());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Weight matrix `[fan_in, fan_out]` drawn uniformly in ±1/√fan_in.
    pub fn insert_linear_weight(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        stream: &mut RandomStream,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| stream.uniform(-bound, bound))
            .collect();
        self.insert(name, DenseArray::matrix(fan_in, fan_out, data)?, true)
    }

    /// Embedding table `[rows, width]` drawn uniformly in ±0.01.
    pub fn insert_embedding(
        &mut self,
        name: &str,
        rows: usize,
        width: usize,
        stream: &mut RandomStream,
    ) -> Result<ParamId> {
        let data = (0..rows * width).map(|_| stream.uniform(-0.01, 0.01)).collect();
        self.insert(name, DenseArray::matrix(rows, width, data)?, true)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, DenseArray::zeros(shape), true)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no parameter named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DenseArray {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseArray {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseArray {
        &self.entries[id.0].grad
    }

    pub fn get(&self, name: &str) -> Result<&DenseArray> {
        Ok(self.value(self.id(name)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Adds a backward pass's gradients into the trainable entries.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (entry, slot) in self.entries.iter_mut().zip(&grads.slots) {
            if let (true, Some(g)) = (entry.trainable, slot) {
                entry.grad.add_assign(g);
            }
        }
    }

    /// Total parameter count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// SHA-256 over names, shapes and value bits; used to prove that
    /// read-only passes leave the store untouched.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for d in e.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
