//! Gated split of item embeddings into a query-independent view (`/q`,
//! query features removed) and a user-independent view (`/u`), plus the
//! counterfactual score deltas between them.

use serde::{Deserialize, Serialize};

use crate::backbones::Mlp;
use crate::error::Result;
use crate::numcore::{DenseArray, Graph, NodeId, ParameterStore, RandomStream};

/// Gate networks over the integrated item embedding.
#[derive(Clone, Debug)]
pub struct Disentangler {
    gate_id: Mlp,
    gate_attr: Option<Mlp>,
    d_e: usize,
    n_attrs: usize,
}

/// Gate activations for a batch of items; `z` spans the full embedding
/// width (attribute gates repeated across their `d_e` block).
#[derive(Clone, Copy, Debug)]
pub struct GateOutput {
    pub z_id: NodeId,
    pub z_attr: Option<NodeId>,
    pub z: NodeId,
    pub m: NodeId,
}

impl Disentangler {
    pub fn register(
        store: &mut ParameterStore,
        d_e: usize,
        n_attrs: usize,
        d_h: usize,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        let d_i = (n_attrs + 1) * d_e;
        let gate_id = Mlp::register(store, "gate/id", &[d_i, d_h, d_e], stream)?;
        let gate_attr = if n_attrs > 0 {
            Some(Mlp::register(store, "gate/attr", &[d_i, d_h, n_attrs], stream)?)
        } else {
            None
        };
        Ok(Self {
            gate_id,
            gate_attr,
            d_e,
            n_attrs,
        })
    }

    pub fn gate_networks(&self) -> impl Iterator<Item = &Mlp> {
        std::iter::once(&self.gate_id).chain(self.gate_attr.as_ref())
    }

    pub fn gates(&self, g: &mut Graph, i_emb: NodeId) -> Result<GateOutput> {
        let zl = self.gate_id.forward(g, i_emb)?;
        let z_id = g.sigmoid(zl)?;
        let (z, z_attr) = match &self.gate_attr {
            None => (z_id, None),
            Some(net) => {
                let al = net.forward(g, i_emb)?;
                let za = g.sigmoid(al)?;
                let widen = g.constant(block_expander(self.n_attrs, self.d_e));
                let wide = g.matmul(za, widen)?;
                (g.concat(&[z_id, wide])?, Some(za))
            }
        };
        let m = g.affine(z, -1.0, 1.0)?;
        Ok(GateOutput { z_id, z_attr, z, m })
    }

    /// `(i_emb/q, i_emb/u) = (2·z ⊙ i_emb, 2·(1−z) ⊙ i_emb)`.
    pub fn split(&self, g: &mut Graph, i_emb: NodeId) -> Result<(NodeId, NodeId, GateOutput)> {
        let gate = self.gates(g, i_emb)?;
        let zq = g.scale(gate.z, 2.0)?;
        let zu = g.scale(gate.m, 2.0)?;
        let iq = g.hadamard(zq, i_emb)?;
        let iu = g.hadamard(zu, i_emb)?;
        Ok((iq, iu, gate))
    }
}

/// `[k, k·d]` 0/1 matrix copying column `j` into block `j`.
fn block_expander(k: usize, d: usize) -> DenseArray {
    let mut e = DenseArray::zeros(&[k, k * d]);
    for j in 0..k {
        e.row_mut(j)[j * d..(j + 1) * d].fill(1.0);
    }
    e
}

/// Matching scores of one (user, query, item) triple under the three item
/// views, and the deltas caused by removing each view's counterpart.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaSet {
    pub s_ui: f64,
    pub s_qi: f64,
    pub s_ui_q: f64,
    pub s_qi_q: f64,
    pub s_ui_u: f64,
    pub s_qi_u: f64,
    pub d_ui_q: f64,
    pub d_qi_q: f64,
    pub d_ui_u: f64,
    pub d_qi_u: f64,
}

impl DeltaSet {
    pub fn from_scores(s_ui: f64, s_qi: f64, s_ui_q: f64, s_qi_q: f64, s_ui_u: f64, s_qi_u: f64) -> Self {
        Self {
            s_ui,
            s_qi,
            s_ui_q,
            s_qi_q,
            s_ui_u,
            s_qi_u,
            d_ui_q: s_ui_q - s_ui,
            d_qi_q: s_qi_q - s_qi,
            d_ui_u: s_ui_u - s_ui,
            d_qi_u: s_qi_u - s_qi,
        }
    }

    /// Builds a set from the four deltas alone (base scores zero).
    pub fn from_deltas(d_ui_q: f64, d_qi_q: f64, d_ui_u: f64, d_qi_u: f64) -> Self {
        Self::from_scores(0.0, 0.0, d_ui_q, d_qi_q, d_ui_u, d_qi_u)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Scores of `u_src` and `q_src` against `i_src`, `i_src/q`, `i_src/u`.
pub fn delta_set(u: &[f32], q: &[f32], i_src: &[f32], i_q: &[f32], i_u: &[f32]) -> DeltaSet {
    DeltaSet::from_scores(
        dot(u, i_src),
        dot(q, i_src),
        dot(u, i_q),
        dot(q, i_q),
        dot(u, i_u),
        dot(q, i_u),
    )
}
