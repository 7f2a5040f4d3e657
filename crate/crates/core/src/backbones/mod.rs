//! User encoders (MLP, MMoE, GRU, self-attention) and the item encoder.
//!
//! Every encoder owns its parameters under a domain prefix (`rec/...` or
//! `src/...`), so the two domains never share weights. Embedding tables
//! live in `embedkit` and are shared.

mod mlp;
mod sequence;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use mlp::{widths, Mlp};
pub use sequence::{GruEncoder, SasEncoder, SeqBatch};

use crate::datahub::Domain;
use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParameterStore, RandomStream};

/// Longest history a sequential encoder sees.
pub const MAX_HISTORY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Mlp,
    Mmoe,
    Gru,
    Sas,
}

impl Backbone {
    pub fn is_sequential(self) -> bool {
        matches!(self, Backbone::Gru | Backbone::Sas)
    }

    pub const ALL: [Backbone; 4] = [Backbone::Mlp, Backbone::Mmoe, Backbone::Gru, Backbone::Sas];
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Mlp => "mlp",
            Backbone::Mmoe => "mmoe",
            Backbone::Gru => "gru",
            Backbone::Sas => "sas",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Backbone::Mlp),
            "mmoe" => Ok(Backbone::Mmoe),
            "gru" | "gru4rec" => Ok(Backbone::Gru),
            "sas" | "sasrec" => Ok(Backbone::Sas),
            other => Err(Error::Config(format!(
                "unknown backbone `{other}` (expected mlp, mmoe, gru or sas)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    /// Backbone depth: MLP layers, expert depth, stacked GRU layers or
    /// attention blocks.
    pub l_b: usize,
    /// Item encoder depth.
    pub l_e: usize,
    pub d_h: usize,
    pub n_experts: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Mlp,
            l_b: 3,
            l_e: 3,
            d_h: 128,
            n_experts: 2,
            max_len: MAX_HISTORY,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_b == 0 || self.l_e == 0 || self.d_h == 0 {
            return Err(Error::Config("layer counts and d_h must be positive".into()));
        }
        if self.backbone == Backbone::Mmoe && self.n_experts == 0 {
            return Err(Error::Config("mmoe needs at least one expert".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

pub fn domain_prefix(domain: Domain) -> &'static str {
    match domain {
        Domain::Rec => "rec",
        Domain::Src => "src",
    }
}

/// A domain's user encoder.
#[derive(Clone, Debug)]
pub enum UserEncoder {
    Mlp(Mlp),
    Mmoe { experts: Vec<Mlp>, gate: Mlp },
    Gru(GruEncoder),
    Sas(SasEncoder),
}

impl UserEncoder {
    /// `d_u` is the integrated user embedding width; `d_seq` the width of
    /// one history element (ignored by the collaborative-filtering
    /// backbones).
    pub fn register(
        store: &mut ParameterStore,
        domain: Domain,
        cfg: &EncoderConfig,
        d_u: usize,
        d_seq: usize,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        cfg.validate()?;
        let p = format!("{}/user", domain_prefix(domain));
        Ok(match cfg.backbone {
            Backbone::Mlp => UserEncoder::Mlp(Mlp::register(store, &p, &widths(d_u, cfg.d_h, cfg.l_b), stream)?),
            Backbone::Mmoe => {
                let experts = (0..cfg.n_experts)
                    .map(|e| Mlp::register(store, &format!("{p}/expert{e}"), &widths(d_u, cfg.d_h, cfg.l_b), stream))
                    .collect::<Result<_>>()?;
                let gate = Mlp::register(store, &format!("{p}/gate"), &[d_u, cfg.d_h, cfg.n_experts], stream)?;
                UserEncoder::Mmoe { experts, gate }
            }
            Backbone::Gru => UserEncoder::Gru(GruEncoder::register(store, &p, cfg, d_u, d_seq, stream)?),
            Backbone::Sas => UserEncoder::Sas(SasEncoder::register(store, &p, cfg, d_u, d_seq, stream)?),
        })
    }

    pub fn is_sequential(&self) -> bool {
        matches!(self, UserEncoder::Gru(_) | UserEncoder::Sas(_))
    }

    /// `[B, d_u]` user embeddings (plus histories for the sequential
    /// backbones) to `[B, d_h]`.
    pub fn forward(&self, g: &mut Graph, u_emb: NodeId, seq: Option<&SeqBatch>) -> Result<NodeId> {
        match self {
            UserEncoder::Mlp(m) => m.forward(g, u_emb),
            UserEncoder::Mmoe { experts, gate } => {
                let logits = gate.forward(g, u_emb)?;
                let w = g.softmax(logits)?;
                let mut acc: Option<NodeId> = None;
                for (e, expert) in experts.iter().enumerate() {
                    let out = expert.forward(g, u_emb)?;
                    let we = g.slice_cols(w, e, e + 1)?;
                    let n = g.shape(we)[0];
                    let we = g.reshape(we, vec![n])?;
                    let part = g.row_scale(out, we)?;
                    acc = Some(match acc {
                        None => part,
                        Some(a) => g.add(a, part)?,
                    });
                }
                Ok(acc.expect("at least one expert"))
            }
            UserEncoder::Gru(enc) => enc.forward(g, u_emb, Self::need_seq(seq)?),
            UserEncoder::Sas(enc) => enc.forward(g, u_emb, Self::need_seq(seq)?),
        }
    }

    fn need_seq(seq: Option<&SeqBatch>) -> Result<&SeqBatch> {
        let s = seq.ok_or_else(|| Error::Contract("sequential backbone needs a history".into()))?;
        if s.lengths.contains(&0) {
            return Err(Error::Contract("sequential backbone given an empty history".into()));
        }
        Ok(s)
    }
}

/// A domain's item encoder: `L_e`-layer MLP from `d_i` to `d_h`.
pub fn register_item_encoder(
    store: &mut ParameterStore,
    domain: Domain,
    cfg: &EncoderConfig,
    d_i: usize,
    stream: &mut RandomStream,
) -> Result<Mlp> {
    Mlp::register(
        store,
        &format!("{}/item", domain_prefix(domain)),
        &widths(d_i, cfg.d_h, cfg.l_e),
        stream,
    )
}

/// Names of parameters under a domain prefix.
pub fn domain_params(store: &ParameterStore, domain: Domain) -> Vec<ParamId> {
    let prefix = format!("{}/", domain_prefix(domain));
    store
        .entries()
        .iter()
        .filter(|e| e.name.starts_with(&prefix))
        .map(|e| store.id(&e.name).expect("listed entry"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::DenseArray;

    fn cfg(backbone: Backbone) -> EncoderConfig {
        EncoderConfig {
            backbone,
            l_b: 2,
            l_e: 2,
            d_h: 8,
            n_experts: 2,
            max_len: 10,
        }
    }

    fn input(g: &mut Graph, rows: usize, cols: usize, seed: u64) -> NodeId {
        let mut s = RandomStream::new("x", seed);
        let data = (0..rows * cols).map(|_| s.uniform(-1.0, 1.0)).collect();
        g.constant(DenseArray::matrix(rows, cols, data).unwrap())
    }

    #[test]
    fn zero_mlp_encoder_gives_zero() {
        let mut store = ParameterStore::new();
        let enc = UserEncoder::register(&mut store, Domain::Rec, &cfg(Backbone::Mlp), 6, 0, &mut RandomStream::new("i", 0))
            .unwrap();
        for e in store.entries_mut() {
            e.value.fill(0.0);
        }
        let mut g = Graph::inference(&store);
        let x = input(&mut g, 3, 6, 1);
        let y = enc.forward(&mut g, x, None).unwrap();
        assert_eq!(g.shape(y), &[3, 8]);
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mmoe_with_zero_gate_averages_experts() {
        let mut store = ParameterStore::new();
        let enc =
            UserEncoder::register(&mut store, Domain::Src, &cfg(Backbone::Mmoe), 6, 0, &mut RandomStream::new("i", 0))
                .unwrap();
        let UserEncoder::Mmoe { experts, gate } = &enc else { unreachable!() };
        for p in gate.params().collect::<Vec<_>>() {
            store.value_mut(p).fill(0.0);
        }
        let mut g = Graph::inference(&store);
        let x = input(&mut g, 4, 6, 2);
        let y = enc.forward(&mut g, x, None).unwrap();
        let a = experts[0].forward(&mut g, x).unwrap();
        let b = experts[1].forward(&mut g, x).unwrap();
        let (a, b) = (g.value(a).clone(), g.value(b).clone());
        for ((y, a), b) in g.value(y).data().iter().zip(a.data()).zip(b.data()) {
            assert!((y - 0.5 * (a + b)).abs() < 1e-6);
        }
    }

    #[test]
    fn sequential_backbone_rejects_missing_history() {
        let mut store = ParameterStore::new();
        let enc = UserEncoder::register(&mut store, Domain::Rec, &cfg(Backbone::Gru), 6, 6, &mut RandomStream::new("i", 0))
            .unwrap();
        let mut g = Graph::inference(&store);
        let x = input(&mut g, 2, 6, 3);
        assert!(matches!(enc.forward(&mut g, x, None), Err(Error::Contract(_))));
    }

    #[test]
    fn domains_do_not_share_parameters() {
        for b in Backbone::ALL {
            let mut store = ParameterStore::new();
            let mut s = RandomStream::new("i", 0);
            UserEncoder::register(&mut store, Domain::Rec, &cfg(b), 6, 6, &mut s).unwrap();
            UserEncoder::register(&mut store, Domain::Src, &cfg(b), 6, 14, &mut s).unwrap();
            register_item_encoder(&mut store, Domain::Rec, &cfg(b), 6, &mut s).unwrap();
            register_item_encoder(&mut store, Domain::Src, &cfg(b), 6, &mut s).unwrap();
            let rec = domain_params(&store, Domain::Rec);
            let src = domain_params(&store, Domain::Src);
            assert!(!rec.is_empty() && !src.is_empty());
            assert_eq!(rec.len() + src.len(), store.len(), "{b}");
        }
    }

    #[test]
    fn item_encoders_differ_across_domains() {
        let mut store = ParameterStore::new();
        let mut s = RandomStream::new("i", 0);
        let rec = register_item_encoder(&mut store, Domain::Rec, &cfg(Backbone::Mlp), 6, &mut s).unwrap();
        let src = register_item_encoder(&mut store, Domain::Src, &cfg(Backbone::Mlp), 6, &mut s).unwrap();
        let mut g = Graph::inference(&store);
        let x = input(&mut g, 1, 6, 4);
        let (a, b) = (rec.forward(&mut g, x).unwrap(), src.forward(&mut g, x).unwrap());
        assert!(g.value(a).max_abs_diff(g.value(b)) > 1e-4);
    }

    #[test]
    fn backbone_names_parse() {
        for b in Backbone::ALL {
            assert_eq!(b.to_string().parse::<Backbone>().unwrap(), b);
        }
        assert!("transformer".parse::<Backbone>().is_err());
    }
}
