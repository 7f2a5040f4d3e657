//! Sequential user encoders over click histories.

use super::{widths, EncoderConfig, Mlp};
use crate::error::{Error, Result};
use crate::numcore::{DenseArray, Graph, NodeId, ParamId, ParameterStore, RandomStream};

/// A batch of histories, left-padded to a common length `seq_len` and laid
/// out sequence-major: row `b·seq_len + t` is step `t` of sequence `b`.
/// The most recent element of every sequence sits at `t = seq_len − 1`.
#[derive(Clone, Debug)]
pub struct SeqBatch {
    pub x: NodeId,
    pub seq_len: usize,
    pub lengths: Vec<usize>,
}

impl SeqBatch {
    pub fn valid(&self) -> Vec<bool> {
        let l = self.seq_len;
        self.lengths
            .iter()
            .flat_map(|&n| (0..l).map(move |t| t + n >= l))
            .collect()
    }

    fn rows_at(&self, t: usize) -> Vec<u32> {
        (0..self.lengths.len()).map(|b| (b * self.seq_len + t) as u32).collect()
    }

    fn check(&self, max_len: usize) -> Result<()> {
        if self.seq_len == 0 || self.seq_len > max_len || self.lengths.iter().any(|&n| n > self.seq_len) {
            return Err(Error::Contract(format!(
                "history window {} exceeds the encoder's {max_len} slots or a sequence length",
                self.seq_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct GruLayer {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

/// Stacked GRU over the history; the last hidden state is combined with
/// the user embedding by a two-layer MLP.
#[derive(Clone, Debug)]
pub struct GruEncoder {
    layers: Vec<GruLayer>,
    combine: Mlp,
    d_h: usize,
    max_len: usize,
}

fn combine_mlp(
    store: &mut ParameterStore,
    prefix: &str,
    d_u: usize,
    d_h: usize,
    stream: &mut RandomStream,
) -> Result<Mlp> {
    Mlp::register(store, &format!("{prefix}/combine"), &widths(d_u + d_h, d_h, 2), stream)
}

fn user_and_seq(g: &mut Graph, combine: &Mlp, u_emb: NodeId, u_seq: NodeId) -> Result<NodeId> {
    let joined = g.concat(&[u_emb, u_seq])?;
    combine.forward(g, joined)
}

impl GruEncoder {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &EncoderConfig,
        d_u: usize,
        d_seq: usize,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        let d_h = cfg.d_h;
        let mut layers = Vec::with_capacity(cfg.l_b);
        for k in 0..cfg.l_b {
            let din = if k == 0 { d_seq } else { d_h };
            let p = format!("{prefix}/gru{}", k + 1);
            layers.push(GruLayer {
                w_ih: store.insert_linear_weight(&format!("{p}/w_ih"), din, 3 * d_h, stream)?,
                w_hh: store.insert_linear_weight(&format!("{p}/w_hh"), d_h, 3 * d_h, stream)?,
                b_ih: store.insert_zeros(&format!("{p}/b_ih"), &[3 * d_h])?,
                b_hh: store.insert_zeros(&format!("{p}/b_hh"), &[3 * d_h])?,
            });
        }
        Ok(Self {
            layers,
            combine: combine_mlp(store, prefix, d_u, d_h, stream)?,
            d_h,
            max_len: cfg.max_len,
        })
    }

    pub fn forward(&self, g: &mut Graph, u_emb: NodeId, seq: &SeqBatch) -> Result<NodeId> {
        seq.check(self.max_len)?;
        let b = seq.lengths.len();
        let valid = seq.valid();
        let masks: Vec<Vec<f32>> = (0..seq.seq_len)
            .map(|t| (0..b).map(|s| f32::from(u8::from(valid[s * seq.seq_len + t]))).collect())
            .collect();
        let mut inputs: Vec<NodeId> = (0..seq.seq_len)
            .map(|t| g.gather(seq.x, &seq.rows_at(t)))
            .collect::<Result<_>>()?;
        for layer in &self.layers {
            let ps = [layer.w_ih, layer.w_hh, layer.b_ih, layer.b_hh].map(|p| g.param(p));
            let mut h = g.constant(DenseArray::zeros(&[b, self.d_h]));
            let mut outs = Vec::with_capacity(seq.seq_len);
            for (t, x_t) in inputs.iter().enumerate() {
                h = g.gru_cell([*x_t, h, ps[0], ps[1], ps[2], ps[3]], Some(masks[t].clone()))?;
                outs.push(h);
            }
            inputs = outs;
        }
        let last = *inputs.last().expect("non-empty window");
        user_and_seq(g, &self.combine, u_emb, last)
    }
}

#[derive(Clone, Debug)]
struct SasBlock {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    ln2: (ParamId, ParamId),
    ffn: Mlp,
}

/// Pre-norm causal self-attention blocks (one head, learned positions,
/// feed-forward width `4·d_h`); the last position's output is combined
/// with the user embedding as in the GRU encoder.
#[derive(Clone, Debug)]
pub struct SasEncoder {
    input: Mlp,
    positions: ParamId,
    blocks: Vec<SasBlock>,
    ln_out: (ParamId, ParamId),
    combine: Mlp,
    max_len: usize,
}

fn layer_norm_params(store: &mut ParameterStore, p: &str, d: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        store.insert(&format!("{p}/gain"), DenseArray::filled(&[d], 1.0), true)?,
        store.insert_zeros(&format!("{p}/bias"), &[d])?,
    ))
}

impl SasEncoder {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &EncoderConfig,
        d_u: usize,
        d_seq: usize,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        let d_h = cfg.d_h;
        let input = Mlp::register(store, &format!("{prefix}/sas_in"), &[d_seq, d_h], stream)?;
        let positions = store.insert_embedding(&format!("{prefix}/sas_pos"), cfg.max_len, d_h, stream)?;
        let mut blocks = Vec::with_capacity(cfg.l_b);
        for k in 0..cfg.l_b {
            let p = format!("{prefix}/sas{}", k + 1);
            blocks.push(SasBlock {
                ln1: layer_norm_params(store, &format!("{p}/ln1"), d_h)?,
                wq: store.insert_linear_weight(&format!("{p}/wq"), d_h, d_h, stream)?,
                wk: store.insert_linear_weight(&format!("{p}/wk"), d_h, d_h, stream)?,
                wv: store.insert_linear_weight(&format!("{p}/wv"), d_h, d_h, stream)?,
                ln2: layer_norm_params(store, &format!("{p}/ln2"), d_h)?,
                ffn: Mlp::register(store, &format!("{p}/ffn"), &[d_h, 4 * d_h, d_h], stream)?,
            });
        }
        Ok(Self {
            input,
            positions,
            blocks,
            ln_out: layer_norm_params(store, &format!("{prefix}/sas_ln"), d_h)?,
            combine: combine_mlp(store, prefix, d_u, d_h, stream)?,
            max_len: cfg.max_len,
        })
    }

    pub fn forward(&self, g: &mut Graph, u_emb: NodeId, seq: &SeqBatch) -> Result<NodeId> {
        seq.check(self.max_len)?;
        let l = seq.seq_len;
        let b = seq.lengths.len();
        let valid = seq.valid();
        // Positions are counted back from the most recent element.
        let slots: Vec<u32> = (0..b)
            .flat_map(|_| (0..l).map(|t| (self.max_len - l + t) as u32))
            .collect();
        let x = self.input.forward(g, seq.x)?;
        let table = g.param(self.positions);
        let pos = g.gather(table, &slots)?;
        let mut h = g.add(x, pos)?;
        for blk in &self.blocks {
            let (g1, b1) = (g.param(blk.ln1.0), g.param(blk.ln1.1));
            let a = g.layer_norm(h, g1, b1)?;
            let proj = [blk.wq, blk.wk, blk.wv].map(|p| g.param(p));
            let att = g.causal_self_attention([a, proj[0], proj[1], proj[2]], l, Some(&valid))?;
            h = g.add(h, att)?;
            let (g2, b2) = (g.param(blk.ln2.0), g.param(blk.ln2.1));
            let f = g.layer_norm(h, g2, b2)?;
            let f = blk.ffn.forward(g, f)?;
            h = g.add(h, f)?;
        }
        let last_rows: Vec<u32> = (0..b).map(|s| (s * l + l - 1) as u32).collect();
        let last = g.gather(h, &last_rows)?;
        let (go, bo) = (g.param(self.ln_out.0), g.param(self.ln_out.1));
        let last = g.layer_norm(last, go, bo)?;
        user_and_seq(g, &self.combine, u_emb, last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::Backbone;

    fn cfg(backbone: Backbone) -> EncoderConfig {
        EncoderConfig {
            backbone,
            l_b: 2,
            l_e: 1,
            d_h: 6,
            n_experts: 2,
            max_len: 8,
        }
    }

    fn rand(g: &mut Graph, rows: usize, cols: usize, seed: u64) -> (NodeId, Vec<f32>) {
        let mut s = RandomStream::new("x", seed);
        let data: Vec<f32> = (0..rows * cols).map(|_| s.uniform(-1.0, 1.0)).collect();
        (g.constant(DenseArray::matrix(rows, cols, data.clone()).unwrap()), data)
    }

    /// The encoding of a short history must not depend on padding: the same
    /// sequence padded into a longer window gives the same output.
    fn padding_invariant(backbone: Backbone) {
        let mut store = ParameterStore::new();
        let mut s = RandomStream::new("init", 3);
        let c = cfg(backbone);
        let enc_gru;
        let enc_sas;
        if backbone == Backbone::Gru {
            enc_gru = Some(GruEncoder::register(&mut store, "rec/user", &c, 4, 5, &mut s).unwrap());
            enc_sas = None;
        } else {
            enc_sas = Some(SasEncoder::register(&mut store, "rec/user", &c, 4, 5, &mut s).unwrap());
            enc_gru = None;
        }
        let run = |g: &mut Graph, seq: &SeqBatch, u: NodeId| match (&enc_gru, &enc_sas) {
            (Some(e), _) => e.forward(g, u, seq).unwrap(),
            (_, Some(e)) => e.forward(g, u, seq).unwrap(),
            _ => unreachable!(),
        };
        let mut g = Graph::inference(&store);
        let (u, _) = rand(&mut g, 1, 4, 1);
        let (x3, data) = rand(&mut g, 3, 5, 2);
        let short = SeqBatch {
            x: x3,
            seq_len: 3,
            lengths: vec![3],
        };
        let mut padded = vec![0.0; 2 * 5];
        padded.extend_from_slice(&data);
        let x5 = g.constant(DenseArray::matrix(5, 5, padded).unwrap());
        let long = SeqBatch {
            x: x5,
            seq_len: 5,
            lengths: vec![3],
        };
        let a = run(&mut g, &short, u);
        let b = run(&mut g, &long, u);
        assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-5, "{backbone}");
    }

    #[test]
    fn gru_ignores_left_padding() {
        padding_invariant(Backbone::Gru);
    }

    #[test]
    fn sas_ignores_left_padding() {
        padding_invariant(Backbone::Sas);
    }

    #[test]
    fn window_longer_than_slots_is_rejected() {
        let mut store = ParameterStore::new();
        let enc = SasEncoder::register(&mut store, "p", &cfg(Backbone::Sas), 4, 5, &mut RandomStream::new("i", 0))
            .unwrap();
        let mut g = Graph::inference(&store);
        let (u, _) = rand(&mut g, 1, 4, 1);
        let (x, _) = rand(&mut g, 9, 5, 2);
        let seq = SeqBatch {
            x,
            seq_len: 9,
            lengths: vec![9],
        };
        assert!(matches!(enc.forward(&mut g, u, &seq), Err(Error::Contract(_))));
    }

    #[test]
    fn valid_mask_is_right_aligned() {
        let seq = SeqBatch {
            x: Graph::standalone().constant(DenseArray::scalar(0.0)),
            seq_len: 3,
            lengths: vec![1, 3],
        };
        assert_eq!(seq.valid(), vec![false, false, true, true, true, true]);
    }
}
