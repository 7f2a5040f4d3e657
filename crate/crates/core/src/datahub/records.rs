use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Rec,
    Src,
}

/// One click. `query` indexes [`Catalog::queries`]; it is 0 for
/// recommendation clicks and for searches with an empty query string.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
    pub domain: Domain,
    pub query: u32,
}

/// Maps raw string ids to dense indices; index 0 is the reserved unknown.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    names: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self {
            names: vec![String::new()],
            lookup: HashMap::new(),
        }
    }

    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&i) = self.lookup.get(raw) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(raw.to_string());
        self.lookup.insert(raw.to_string(), i);
        i
    }

    /// Index of a known name, or 0.
    pub fn get(&self, raw: &str) -> u32 {
        self.lookup.get(raw).copied().unwrap_or(0)
    }

    pub fn name(&self, i: u32) -> &str {
        &self.names[i as usize]
    }

    /// Table rows including the reserved row 0.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.len() <= 1
    }

    /// Rebuilds the reverse map after deserialisation.
    pub fn reindex(&mut self) {
        self.lookup = self
            .names
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
    }
}

/// Users, items, words and attributes of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub users: Vocab,
    pub items: Vocab,
    pub words: Vocab,
    /// Token lists per query id; query 0 is the empty query.
    pub queries: Vec<Vec<u32>>,
    pub query_text: Vocab,
    /// Per-user attribute indices, one row per user (row 0 included).
    pub user_attrs: Vec<Vec<u32>>,
    pub item_attrs: Vec<Vec<u32>>,
    /// Raw-value remap of each user / item attribute column.
    pub user_attr_vocabs: Vec<Vocab>,
    pub item_attr_vocabs: Vec<Vocab>,
}

impl Catalog {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_user_attrs(&self) -> usize {
        self.user_attr_vocabs.len()
    }

    pub fn n_item_attrs(&self) -> usize {
        self.item_attr_vocabs.len()
    }

    /// Table sizes of the user attribute columns (reserved row included).
    pub fn user_attr_sizes(&self) -> Vec<usize> {
        self.user_attr_vocabs.iter().map(Vocab::len).collect()
    }

    pub fn item_attr_sizes(&self) -> Vec<usize> {
        self.item_attr_vocabs.iter().map(Vocab::len).collect()
    }

    pub fn query_tokens(&self, q: u32) -> &[u32] {
        &self.queries[q as usize]
    }

    pub fn reindex(&mut self) {
        self.users.reindex();
        self.items.reindex();
        self.words.reindex();
        self.query_text.reindex();
        for v in self.user_attr_vocabs.iter_mut().chain(&mut self.item_attr_vocabs) {
            v.reindex();
        }
    }
}
