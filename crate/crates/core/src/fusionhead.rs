//! Scalar-gated fusion of the recommendation item representation with the
//! query-independent view, and preference scoring.

use crate::backbones::Mlp;
use crate::error::Result;
use crate::numcore::{Graph, NodeId, ParameterStore, RandomStream};

#[derive(Clone, Debug)]
pub struct FusionHead {
    net: Mlp,
}

impl FusionHead {
    /// Registers `fusion/l1` (`2·d_h → d_h`) and `fusion/l2` (`d_h → 1`).
    pub fn register(store: &mut ParameterStore, d_h: usize, stream: &mut RandomStream) -> Result<Self> {
        Ok(Self {
            net: Mlp::register(store, "fusion", &[2 * d_h, d_h, 1], stream)?,
        })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    /// Gate `g = σ(MLP([i_rec | i_src/q]))`, shape `[n]`.
    pub fn gate(&self, g: &mut Graph, i_rec: NodeId, i_q: NodeId) -> Result<NodeId> {
        let joined = g.concat(&[i_rec, i_q])?;
        let logit = self.net.forward(g, joined)?;
        let n = g.shape(logit)[0];
        let logit = g.reshape(logit, vec![n])?;
        g.sigmoid(logit)
    }

    /// `(i_fuse, g)` with `i_fuse = g·i_rec + (1−g)·i_src/q`.
    pub fn fuse(&self, g: &mut Graph, i_rec: NodeId, i_q: NodeId) -> Result<(NodeId, NodeId)> {
        let gate = self.gate(g, i_rec, i_q)?;
        Ok((mix(g, i_rec, i_q, gate)?, gate))
    }
}

/// `gate·a + (1−gate)·b` row-wise.
pub fn mix(g: &mut Graph, a: NodeId, b: NodeId, gate: NodeId) -> Result<NodeId> {
    let rest = g.affine(gate, -1.0, 1.0)?;
    let pa = g.row_scale(a, gate)?;
    let pb = g.row_scale(b, rest)?;
    g.add(pa, pb)
}

/// Plain-vector form of the fusion.
pub fn fuse_vectors(i_rec: &[f32], i_q: &[f32], gate: f32) -> Vec<f32> {
    i_rec.iter().zip(i_q).map(|(a, b)| gate * a + (1.0 - gate) * b).collect()
}

/// `r̂_ui = u_rec · i_fuse`.
pub fn predict(u_rec: &[f32], i_fuse: &[f32]) -> f32 {
    u_rec.iter().zip(i_fuse).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum::<f64>() as f32
}

/// `r̂^aug_ui = u_rec · i_src/q`.
pub fn predict_aug(u_rec: &[f32], i_q: &[f32]) -> f32 {
    predict(u_rec, i_q)
}
