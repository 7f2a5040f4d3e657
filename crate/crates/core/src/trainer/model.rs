//! The assembled model: embeddings, per-domain encoders, disentangler and
//! fusion head over one parameter store.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelMode};
use crate::backbones::{register_item_encoder, EncoderConfig, Mlp, SeqBatch, UserEncoder};
use crate::datahub::{Catalog, Domain, Example, SplitDataset};
use crate::disentangler::Disentangler;
use crate::embedkit::{EmbeddingTables, TableSizes};
use crate::error::{Error, Result};
use crate::fusionhead::FusionHead;
use crate::numcore::{DenseArray, Graph, NodeId, ParameterStore, RandomStream};

/// Everything needed to rebuild the parameter layout of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub sizes: TableSizes,
    pub encoder: EncoderConfig,
    pub d_e: usize,
}

impl ModelSpec {
    pub fn new(catalog: &Catalog, cfg: &ExperimentConfig) -> Self {
        Self {
            sizes: TableSizes::of(catalog),
            encoder: cfg.encoder.clone(),
            d_e: cfg.d_e,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClardRec {
    pub spec: ModelSpec,
    pub mode: ModelMode,
    pub tables: EmbeddingTables,
    pub rec_user: UserEncoder,
    pub rec_item: Mlp,
    pub src_user: UserEncoder,
    pub src_item: Mlp,
    pub disentangler: Disentangler,
    pub fusion: FusionHead,
}

/// Item representations for a set of items, one row per item.
#[derive(Clone, Copy, Debug)]
pub struct ItemViews {
    pub i_rec: NodeId,
    /// `i_src`; `None` when the search side is off.
    pub i_src: Option<NodeId>,
    /// `i_src/q` (or `i_src` under `-CD`).
    pub i_q: Option<NodeId>,
    /// `i_src/u`; only with disentangling on.
    pub i_u: Option<NodeId>,
}

/// Precomputed per-item vectors for ranking and export.
#[derive(Clone, Debug)]
pub struct ItemTable {
    /// The vector users are scored against: `i_fuse`, or `i_rec` when
    /// fusion is off.
    pub score: DenseArray,
    pub i_rec: DenseArray,
    pub i_q: DenseArray,
    pub i_u: DenseArray,
    pub gate: Vec<f32>,
}

impl ClardRec {
    /// Registers every module into `store`. The layout is the same for all
    /// variants so checkpoints are interchangeable; `mode` only decides
    /// which parts the forward passes touch.
    pub fn build(store: &mut ParameterStore, spec: ModelSpec, mode: ModelMode, seed: u64) -> Result<Self> {
        spec.encoder.validate()?;
        let root = RandomStream::new("init", seed);
        let d_h = spec.encoder.d_h;
        let tables = EmbeddingTables::register(store, &spec.sizes, spec.d_e, d_h, &mut root.derive("emb"))?;
        let (d_u, d_i) = (tables.d_u(), tables.d_i());
        let rec_user =
            UserEncoder::register(store, Domain::Rec, &spec.encoder, d_u, d_i, &mut root.derive("rec/user"))?;
        let rec_item = register_item_encoder(store, Domain::Rec, &spec.encoder, d_i, &mut root.derive("rec/item"))?;
        let src_user = UserEncoder::register(
            store,
            Domain::Src,
            &spec.encoder,
            d_u,
            d_i + tables.d_word(),
            &mut root.derive("src/user"),
        )?;
        let src_item = register_item_encoder(store, Domain::Src, &spec.encoder, d_i, &mut root.derive("src/item"))?;
        let disentangler =
            Disentangler::register(store, spec.d_e, tables.n_item_attrs(), d_h, &mut root.derive("gate"))?;
        let fusion = FusionHead::register(store, d_h, &mut root.derive("fusion"))?;
        Ok(Self {
            spec,
            mode,
            tables,
            rec_user,
            rec_item,
            src_user,
            src_item,
            disentangler,
            fusion,
        })
    }

    pub fn d_h(&self) -> usize {
        self.spec.encoder.d_h
    }

    fn history_batch(
        &self,
        g: &mut Graph,
        catalog: &Catalog,
        domain: Domain,
        histories: &[Vec<(u32, u32)>],
    ) -> Result<SeqBatch> {
        let max_len = self.spec.encoder.max_len;
        let lengths: Vec<usize> = histories.iter().map(|h| h.len().min(max_len)).collect();
        let seq_len = lengths.iter().copied().max().unwrap_or(0).max(1);
        let mut items = Vec::with_capacity(histories.len() * seq_len);
        let mut queries = Vec::with_capacity(histories.len() * seq_len);
        for (h, &n) in histories.iter().zip(&lengths) {
            items.extend(std::iter::repeat_n(0, seq_len - n));
            queries.extend(std::iter::repeat_n(0, seq_len - n));
            for &(i, q) in &h[h.len() - n..] {
                items.push(i);
                queries.push(q);
            }
        }
        let mut x = self.tables.compose_items(g, catalog, &items)?;
        if domain == Domain::Src {
            let qv = self.tables.encode_queries(g, catalog, &queries)?;
            x = g.concat(&[x, qv])?;
        }
        Ok(SeqBatch { x, seq_len, lengths })
    }

    /// `u_rec` for each example, `[B, d_h]`.
    pub fn user_rec(&self, g: &mut Graph, split: &SplitDataset, examples: &[Example]) -> Result<NodeId> {
        self.user(g, split, examples, Domain::Rec)
    }

    /// `u_src` for each example, `[B, d_h]`.
    pub fn user_src(&self, g: &mut Graph, split: &SplitDataset, examples: &[Example]) -> Result<NodeId> {
        self.user(g, split, examples, Domain::Src)
    }

    fn user(&self, g: &mut Graph, split: &SplitDataset, examples: &[Example], domain: Domain) -> Result<NodeId> {
        let catalog = &split.catalog;
        let users: Vec<u32> = examples.iter().map(|e| e.user).collect();
        let u_emb = self.tables.compose_users(g, catalog, &users)?;
        let enc = match domain {
            Domain::Rec => &self.rec_user,
            Domain::Src => &self.src_user,
        };
        if !enc.is_sequential() {
            return enc.forward(g, u_emb, None);
        }
        if split.rec_seq.is_empty() {
            return Err(Error::Contract(
                "sequential backbone needs a split prepared in the sequential scenario".into(),
            ));
        }
        let histories: Vec<Vec<(u32, u32)>> = examples
            .iter()
            .map(|e| match domain {
                Domain::Rec => split.rec_history(e).iter().map(|&i| (i, 0)).collect(),
                Domain::Src => split.src_history(e).to_vec(),
            })
            .collect();
        let seq = self.history_batch(g, catalog, domain, &histories)?;
        enc.forward(g, u_emb, Some(&seq))
    }

    /// Representations of `items` per the current mode.
    pub fn item_views(&self, g: &mut Graph, catalog: &Catalog, items: &[u32]) -> Result<ItemViews> {
        let i_emb = self.tables.compose_items(g, catalog, items)?;
        let i_rec = self.rec_item.forward(g, i_emb)?;
        if !self.mode.use_src {
            return Ok(ItemViews {
                i_rec,
                i_src: None,
                i_q: None,
                i_u: None,
            });
        }
        let i_src = self.src_item.forward(g, i_emb)?;
        let (i_q, i_u) = if self.mode.disentangle {
            let (eq, eu, _) = self.disentangler.split(g, i_emb)?;
            (self.src_item.forward(g, eq)?, Some(self.src_item.forward(g, eu)?))
        } else {
            (i_src, None)
        };
        Ok(ItemViews {
            i_rec,
            i_src: Some(i_src),
            i_q: Some(i_q),
            i_u,
        })
    }

    /// Every view computed regardless of mode, for export.
    pub fn all_views(&self, g: &mut Graph, catalog: &Catalog, items: &[u32]) -> Result<(NodeId, NodeId, NodeId)> {
        let i_emb = self.tables.compose_items(g, catalog, items)?;
        let i_rec = self.rec_item.forward(g, i_emb)?;
        let (eq, eu, _) = self.disentangler.split(g, i_emb)?;
        Ok((i_rec, self.src_item.forward(g, eq)?, self.src_item.forward(g, eu)?))
    }

    /// The vectors recommendation scores are taken against, for rows of
    /// `views` (fusion applied when on).
    pub fn scoring_items(&self, g: &mut Graph, i_rec: NodeId, i_q: Option<NodeId>) -> Result<(NodeId, Option<NodeId>)> {
        match (self.mode.fusion, i_q) {
            (true, Some(q)) => {
                let (f, gate) = self.fusion.fuse(g, i_rec, q)?;
                Ok((f, Some(gate)))
            }
            _ => Ok((i_rec, None)),
        }
    }

    /// Per-item vectors for the whole catalog, computed in chunks without
    /// recording gradients.
    pub fn item_table(&self, store: &ParameterStore, catalog: &Catalog, chunk: usize) -> Result<ItemTable> {
        let n = catalog.n_items().max(1);
        let d = self.d_h();
        let mut score = Vec::with_capacity(n * d);
        let mut rec = Vec::with_capacity(n * d);
        let mut q = Vec::with_capacity(n * d);
        let mut u = Vec::with_capacity(n * d);
        let mut gates = Vec::with_capacity(n);
        let ids: Vec<u32> = (0..n as u32).collect();
        for part in ids.chunks(chunk.max(1)) {
            let mut g = Graph::inference(store);
            let (i_rec, i_q, i_u) = self.all_views(&mut g, catalog, part)?;
            let views = self.item_views(&mut g, catalog, part)?;
            let (s, gate) = self.scoring_items(&mut g, views.i_rec, views.i_q)?;
            score.extend_from_slice(g.value(s).data());
            rec.extend_from_slice(g.value(i_rec).data());
            q.extend_from_slice(g.value(i_q).data());
            u.extend_from_slice(g.value(i_u).data());
            match gate {
                Some(gt) => gates.extend_from_slice(g.value(gt).data()),
                None => gates.extend(std::iter::repeat_n(1.0, part.len())),
            }
        }
        Ok(ItemTable {
            score: DenseArray::matrix(n, d, score)?,
            i_rec: DenseArray::matrix(n, d, rec)?,
            i_q: DenseArray::matrix(n, d, q)?,
            i_u: DenseArray::matrix(n, d, u)?,
            gate: gates,
        })
    }

    /// `u_rec` rows for `examples`, computed in chunks.
    pub fn user_table(
        &self,
        store: &ParameterStore,
        split: &SplitDataset,
        examples: &[Example],
        chunk: usize,
    ) -> Result<DenseArray> {
        let d = self.d_h();
        let mut out = Vec::with_capacity(examples.len() * d);
        for part in examples.chunks(chunk.max(1)) {
            let mut g = Graph::inference(store);
            let u = self.user_rec(&mut g, split, part)?;
            out.extend_from_slice(g.value(u).data());
        }
        DenseArray::matrix(examples.len(), d, out)
    }
}
