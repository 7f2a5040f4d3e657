//! Embedding tables and the integrated user/item embeddings built from them.

use crate::datahub::Catalog;
use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParameterStore, RandomStream};

/// Row counts of every table, taken from a catalog.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TableSizes {
    pub users: usize,
    pub items: usize,
    pub words: usize,
    pub user_attrs: Vec<usize>,
    pub item_attrs: Vec<usize>,
}

impl TableSizes {
    pub fn of(catalog: &Catalog) -> Self {
        Self {
            users: catalog.n_users(),
            items: catalog.n_items(),
            words: catalog.n_words(),
            user_attrs: catalog.user_attr_sizes(),
            item_attrs: catalog.item_attr_sizes(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    user_id: ParamId,
    item_id: ParamId,
    word: ParamId,
    user_attrs: Vec<ParamId>,
    item_attrs: Vec<ParamId>,
    d_e: usize,
    d_word: usize,
}

impl EmbeddingTables {
    /// Registers `emb/user_id`, `emb/item_id`, `emb/word` and one
    /// `emb/u_attr_k` / `emb/i_attr_k` per attribute column.
    pub fn register(
        store: &mut ParameterStore,
        sizes: &TableSizes,
        d_e: usize,
        d_word: usize,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        let user_id = store.insert_embedding("emb/user_id", sizes.users.max(1), d_e, stream)?;
        let item_id = store.insert_embedding("emb/item_id", sizes.items.max(1), d_e, stream)?;
        let word = store.insert_embedding("emb/word", sizes.words.max(1), d_word, stream)?;
        let user_attrs = sizes
            .user_attrs
            .iter()
            .enumerate()
            .map(|(k, n)| store.insert_embedding(&format!("emb/u_attr_{}", k + 1), (*n).max(1), d_e, stream))
            .collect::<Result<_>>()?;
        let item_attrs = sizes
            .item_attrs
            .iter()
            .enumerate()
            .map(|(k, n)| store.insert_embedding(&format!("emb/i_attr_{}", k + 1), (*n).max(1), d_e, stream))
            .collect::<Result<_>>()?;
        Ok(Self {
            user_id,
            item_id,
            word,
            user_attrs,
            item_attrs,
            d_e,
            d_word,
        })
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn d_word(&self) -> usize {
        self.d_word
    }

    /// `(|u^a| + 1)·d_e`
    pub fn d_u(&self) -> usize {
        (self.user_attrs.len() + 1) * self.d_e
    }

    /// `(|i^a| + 1)·d_e`
    pub fn d_i(&self) -> usize {
        (self.item_attrs.len() + 1) * self.d_e
    }

    pub fn n_item_attrs(&self) -> usize {
        self.item_attrs.len()
    }

    pub fn all(&self) -> Vec<ParamId> {
        let mut v = vec![self.user_id, self.item_id, self.word];
        v.extend(&self.user_attrs);
        v.extend(&self.item_attrs);
        v
    }

    fn compose(
        g: &mut Graph,
        id_table: ParamId,
        attr_tables: &[ParamId],
        ids: &[u32],
        attrs: &[Vec<u32>],
    ) -> Result<NodeId> {
        let table = g.param(id_table);
        let mut parts = vec![g.gather(table, ids)?];
        for (k, t) in attr_tables.iter().enumerate() {
            let col: Vec<u32> = ids
                .iter()
                .map(|&i| {
                    attrs
                        .get(i as usize)
                        .and_then(|row| row.get(k))
                        .copied()
                        .ok_or_else(|| Error::Lookup(format!("no attribute row for index {i}")))
                })
                .collect::<Result<_>>()?;
            let t = g.param(*t);
            parts.push(g.gather(t, &col)?);
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        g.concat(&parts)
    }

    /// `[u^ID | u^a1 | u^a2 ..]` per user, `[n, d_u]`.
    pub fn compose_users(&self, g: &mut Graph, catalog: &Catalog, users: &[u32]) -> Result<NodeId> {
        Self::compose(g, self.user_id, &self.user_attrs, users, &catalog.user_attrs)
    }

    /// `[i^ID | i^a1 | i^a2 ..]` per item, `[n, d_i]`.
    pub fn compose_items(&self, g: &mut Graph, catalog: &Catalog, items: &[u32]) -> Result<NodeId> {
        Self::compose(g, self.item_id, &self.item_attrs, items, &catalog.item_attrs)
    }

    /// Mean of word rows per query; the empty query pools to zeros.
    pub fn encode_queries(&self, g: &mut Graph, catalog: &Catalog, queries: &[u32]) -> Result<NodeId> {
        let segments: Vec<Vec<u32>> = queries.iter().map(|q| catalog.query_tokens(*q).to_vec()).collect();
        let table = g.param(self.word);
        g.mean_pool(table, &segments)
    }
}
