//! Loss functions. Each loss has a scalar form over plain numbers (used for
//! reporting and as a test oracle) and a batched form on the graph (used
//! for training). Batched inputs are flat `[B·(1+M)]` score vectors laid
//! out row by row as `[pos, neg_1, .., neg_M]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::disentangler::DeltaSet;
use crate::error::{Error, Result};
use crate::numcore::{DenseArray, Graph, NodeId};

/// Sign reading of the triplet counterfactual losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// The σ-arguments exactly as printed.
    #[default]
    AsWritten,
    /// Every σ-argument negated, matching the stated delta inequalities.
    Motivation,
}

impl Convention {
    pub fn sign(self) -> f64 {
        match self {
            Convention::AsWritten => 1.0,
            Convention::Motivation => -1.0,
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::AsWritten => "as-written",
            Convention::Motivation => "motivation",
        })
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" | "as_written" | "written" => Ok(Convention::AsWritten),
            "motivation" | "motivation-consistent" => Ok(Convention::Motivation),
            other => Err(Error::Config(format!(
                "unknown convention `{other}` (expected as-written or motivation)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            alpha: 0.1,
            beta: 0.2,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Names of the triplet components, in storage order.
pub const CD_NAMES: [&str; 4] = ["cd_/q", "cd_/u", "cd_qi", "cd_ui"];
/// Names of the constraint components, in storage order.
pub const CON_NAMES: [&str; 4] = ["con_ui/q", "con_ui/u", "con_qi/q", "con_qi/u"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub src: f64,
    pub cd: [f64; 4],
    pub con: [f64; 4],
    pub da: f64,
    pub total: f64,
}

impl LossReport {
    pub fn cd_sum(&self) -> f64 {
        self.cd.iter().sum()
    }

    pub fn con_sum(&self) -> f64 {
        self.con.iter().sum()
    }

    pub fn components(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![("rec", self.rec), ("src", self.src)];
        v.extend(CD_NAMES.iter().copied().zip(self.cd));
        v.extend(CON_NAMES.iter().copied().zip(self.con));
        v.push(("da", self.da));
        v
    }
}

/// `−ln σ(x)`, stable for large `|x|`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Sampled cross-entropy: `−1/(1+M) · ln softmax(pos | pos, negs)`.
pub fn ce_loss(pos: f64, negs: &[f64]) -> f64 {
    let mx = negs.iter().copied().fold(pos, f64::max);
    let lse = mx + std::iter::once(pos).chain(negs.iter().copied()).map(|s| (s - mx).exp()).sum::<f64>().ln();
    (lse - pos) / (1 + negs.len()) as f64
}

/// `(A, B)` delta selectors of the four triplet losses; the positive term
/// is `−ln σ(c·(A−B))` and each negative term `−ln σ(c·(B⁻−A⁻))`.
fn triplet_pairs(d: &DeltaSet) -> [(f64, f64); 4] {
    [
        (d.d_qi_q, d.d_ui_q),
        (d.d_ui_u, d.d_qi_u),
        (d.d_qi_q, d.d_qi_u),
        (d.d_ui_u, d.d_ui_q),
    ]
}

pub fn cf_triplet_loss(pos: &DeltaSet, negs: &[DeltaSet], convention: Convention) -> Result<[f64; 4]> {
    if negs.is_empty() {
        return Err(Error::Contract("triplet loss needs at least one negative".into()));
    }
    let c = convention.sign();
    let m = negs.len() as f64;
    let p = triplet_pairs(pos);
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        let (a, b) = p[k];
        *o = neg_log_sigmoid(c * (a - b))
            + negs
                .iter()
                .map(|n| {
                    let (a, b) = triplet_pairs(n)[k];
                    neg_log_sigmoid(c * (b - a))
                })
                .sum::<f64>()
                / m;
    }
    Ok(out)
}

fn con_deltas(d: &DeltaSet) -> [f64; 4] {
    [d.d_ui_q, d.d_ui_u, d.d_qi_q, d.d_qi_u]
}

/// Hinge penalties: a positive's scores should not rise, a negative's
/// should not fall, when either view is removed.
pub fn constraint_loss(pos: &DeltaSet, negs: &[DeltaSet]) -> Result<[f64; 4]> {
    if negs.is_empty() {
        return Err(Error::Contract("constraint loss needs at least one negative".into()));
    }
    let m = negs.len() as f64;
    let p = con_deltas(pos);
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        *o = p[k].max(0.0) + negs.iter().map(|n| (-con_deltas(n)[k]).max(0.0)).sum::<f64>() / m;
    }
    Ok(out)
}

pub fn src_supervision(pos_ui: f64, negs_ui: &[f64], pos_qi: f64, negs_qi: &[f64]) -> f64 {
    ce_loss(pos_ui, negs_ui) + ce_loss(pos_qi, negs_qi)
}

/// In-batch softmax of the confidences.
pub fn confidence_weights(confidence: &[f64]) -> Vec<f64> {
    let mx = confidence.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = confidence.iter().map(|c| (c - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// How the augmentation loss weighs its rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaWeighting {
    /// Softmax of the confidences, treated as constants.
    #[default]
    Detached,
    /// Softmax of the confidences with gradient flowing through them.
    Through,
    /// `1/|B|` for every row.
    Uniform,
}

/// One augmentation row: scores of `u_rec · i_src/q` for the positive and
/// the negatives, and the confidence `ŝ_ui/q` of the positive.
#[derive(Clone, Debug, PartialEq)]
pub struct AugRow {
    pub pos: f64,
    pub negs: Vec<f64>,
    pub confidence: f64,
}

pub fn da_loss(rows: &[AugRow], weighting: DaWeighting) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Contract("augmentation loss needs a non-empty batch".into()));
    }
    let w = match weighting {
        DaWeighting::Uniform => vec![1.0 / rows.len() as f64; rows.len()],
        _ => confidence_weights(&rows.iter().map(|r| r.confidence).collect::<Vec<_>>()),
    };
    Ok(rows.iter().zip(w).map(|(r, w)| w * ce_loss(r.pos, &r.negs)).sum())
}

/// `L_rec + λ·(L_src + α·ΣL_cd + β·L_da + γ·ΣL_con)`.
pub fn total_loss(r: &LossReport, w: &LossWeights) -> Result<f64> {
    for (name, v) in r.components() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss component {name} = {v}")));
        }
    }
    Ok(r.rec + w.lambda * (r.src + w.alpha * r.cd_sum() + w.beta * r.da + w.gamma * r.con_sum()))
}

// ---- batched graph forms ----------------------------------------------------

fn row_pattern(batch: usize, m: usize, pos: f32, neg: f32) -> DenseArray {
    let data = (0..batch)
        .flat_map(|_| std::iter::once(pos).chain(std::iter::repeat_n(neg, m)))
        .collect();
    DenseArray::vector(data)
}

/// Per-row sampled cross-entropy, `[B·(1+M)] -> [B]`.
pub fn ce_rows(g: &mut Graph, scores: NodeId, batch: usize, m: usize) -> Result<NodeId> {
    let s = g.reshape(scores, vec![batch, 1 + m])?;
    let ls = g.log_softmax(s)?;
    let first = g.slice_cols(ls, 0, 1)?;
    let first = g.reshape(first, vec![batch])?;
    g.scale(first, -1.0 / (1 + m) as f32)
}

/// Batch mean of the sampled cross-entropy.
pub fn ce_batch(g: &mut Graph, scores: NodeId, batch: usize, m: usize) -> Result<NodeId> {
    let rows = ce_rows(g, scores, batch, m)?;
    g.mean(rows)
}

/// Batch mean of one triplet loss given the flat `A` and `B` delta vectors.
pub fn triplet_batch(
    g: &mut Graph,
    a: NodeId,
    b: NodeId,
    batch: usize,
    m: usize,
    convention: Convention,
) -> Result<NodeId> {
    let c = convention.sign() as f32;
    let diff = g.sub(a, b)?;
    let signs = g.constant(row_pattern(batch, m, c, -c));
    let arg = g.hadamard(diff, signs)?;
    let ls = g.log_sigmoid(arg)?;
    let weights = g.constant(row_pattern(batch, m, 1.0, 1.0 / m as f32));
    let weighted = g.hadamard(ls, weights)?;
    let s = g.sum(weighted)?;
    g.scale(s, -1.0 / batch as f32)
}

/// Batch mean of one constraint component given its flat delta vector.
pub fn constraint_batch(g: &mut Graph, delta: NodeId, batch: usize, m: usize) -> Result<NodeId> {
    let signs = g.constant(row_pattern(batch, m, 1.0, -1.0));
    let signed = g.hadamard(delta, signs)?;
    let hinge = g.relu(signed)?;
    let weights = g.constant(row_pattern(batch, m, 1.0, 1.0 / m as f32));
    let weighted = g.hadamard(hinge, weights)?;
    let s = g.sum(weighted)?;
    g.scale(s, 1.0 / batch as f32)
}

/// Confidence-weighted augmentation loss. `confidence` is `[B]`.
pub fn da_batch(
    g: &mut Graph,
    aug_scores: NodeId,
    confidence: NodeId,
    batch: usize,
    m: usize,
    weighting: DaWeighting,
) -> Result<NodeId> {
    let ce = ce_rows(g, aug_scores, batch, m)?;
    let w = match weighting {
        DaWeighting::Uniform => g.constant(DenseArray::filled(&[batch], 1.0 / batch as f32)),
        _ => {
            let c = match weighting {
                DaWeighting::Detached => g.detach(confidence),
                _ => confidence,
            };
            let c = g.reshape(c, vec![1, batch])?;
            let w = g.softmax(c)?;
            g.reshape(w, vec![batch])?
        }
    };
    g.dot(w, ce)
}

/// Indices of the positive entries in a flat `[B·(1+M)]` layout.
pub fn positive_rows(batch: usize, m: usize) -> Vec<u32> {
    (0..batch).map(|b| (b * (1 + m)) as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ce_hand_values() {
        assert!(close(ce_loss(0.0, &[0.0]), 0.5 * 2f64.ln(), 1e-12));
        assert!(close(ce_loss(3f64.ln(), &[0.0]), -0.5 * 0.75f64.ln(), 1e-12));
        assert!(ce_loss(50.0, &[0.0, -3.0]) < 1e-20);
        assert!(ce_loss(1e4, &[-1e4]).is_finite());
    }

    #[test]
    fn triplets_at_zero_are_two_ln_two() {
        let z = DeltaSet::default();
        for conv in [Convention::AsWritten, Convention::Motivation] {
            for v in cf_triplet_loss(&z, &[z], conv).unwrap() {
                assert!(close(v, 2.0 * 2f64.ln(), 1e-12));
            }
        }
    }

    #[test]
    fn as_written_q_example() {
        let pos = DeltaSet::from_deltas(0.0, 2.0, 0.0, 0.0);
        let neg = DeltaSet::from_deltas(2.0, 0.0, 0.0, 0.0);
        let l = cf_triplet_loss(&pos, &[neg], Convention::AsWritten).unwrap();
        assert!(close(l[0], 0.25386, 1e-5), "{}", l[0]);
    }

    #[test]
    fn conventions_negate_every_argument() {
        let pos = DeltaSet::from_deltas(0.3, -1.2, 0.7, 0.1);
        let neg = DeltaSet::from_deltas(-0.4, 0.9, 0.2, -0.6);
        let a = cf_triplet_loss(&pos, &[neg], Convention::AsWritten).unwrap();
        let b = cf_triplet_loss(&pos, &[neg], Convention::Motivation).unwrap();
        // −ln σ(x) − (−ln σ(−x)) = −x, summed over the positive and negative terms.
        let pairs = |d: &DeltaSet| triplet_pairs(d);
        for k in 0..4 {
            let (pa, pb) = pairs(&pos)[k];
            let (na, nb) = pairs(&neg)[k];
            let expected = -(pa - pb) - (nb - na);
            assert!(close(a[k] - b[k], expected, 1e-12));
        }
    }

    #[test]
    fn empty_negatives_is_a_contract_error() {
        let z = DeltaSet::default();
        assert!(matches!(cf_triplet_loss(&z, &[], Convention::AsWritten), Err(Error::Contract(_))));
    }

    #[test]
    fn constraint_hand_values() {
        let pos = DeltaSet::from_deltas(-0.3, 0.0, 0.0, 0.0);
        let neg = DeltaSet::from_deltas(-0.2, 0.0, 0.0, 0.0);
        assert!(close(constraint_loss(&pos, &[neg]).unwrap()[0], 0.2, 1e-12));
        let quiet = constraint_loss(
            &DeltaSet::from_deltas(-1.0, -0.5, 0.0, -2.0),
            &[DeltaSet::from_deltas(0.0, 1.0, 3.0, 0.5)],
        )
        .unwrap();
        assert_eq!(quiet, [0.0; 4]);
        let up = constraint_loss(&DeltaSet::from_deltas(0.5, 0.0, 0.0, 0.0), &[DeltaSet::default()]).unwrap();
        assert_eq!(up[0], 0.5);
    }

    #[test]
    fn src_supervision_and_da_values() {
        assert!(close(src_supervision(0.0, &[0.0], 0.0, &[0.0]), 2f64.ln(), 1e-12));
        assert!(close(src_supervision(1.0, &[0.5], 2.0, &[-1.0]), src_supervision(2.0, &[-1.0], 1.0, &[0.5]), 1e-15));
        let w = confidence_weights(&[0.0, 3f64.ln()]);
        assert!(close(w[0], 0.25, 1e-12) && close(w[1], 0.75, 1e-12));
        assert!(confidence_weights(&[1.0; 4]).iter().all(|v| close(*v, 0.25, 1e-15)));
        let row = AugRow {
            pos: 0.4,
            negs: vec![0.1, -0.2],
            confidence: 5.0,
        };
        assert!(close(
            da_loss(std::slice::from_ref(&row), DaWeighting::Detached).unwrap(),
            ce_loss(0.4, &[0.1, -0.2]),
            1e-15
        ));
    }

    #[test]
    fn total_arithmetic() {
        let r = LossReport {
            rec: 1.0,
            src: 1.0,
            cd: [1.0, 0.0, 0.0, 0.0],
            con: [0.0, 0.0, 0.0, 1.0],
            da: 1.0,
            total: 0.0,
        };
        let w = LossWeights {
            lambda: 0.1,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        };
        assert!(close(total_loss(&r, &w).unwrap(), 1.4, 1e-12));
        assert_eq!(total_loss(&r, &LossWeights { lambda: 0.0, ..w }).unwrap(), 1.0);
        let bad = LossReport { da: f64::NAN, ..r };
        assert!(matches!(total_loss(&bad, &w), Err(Error::Numeric(m)) if m.contains("da")));
    }

    /// The batched graph forms agree with the scalar forms.
    #[test]
    fn batched_forms_match_scalar_forms() {
        let (batch, m) = (3, 2);
        let n = batch * (1 + m);
        let mut s = crate::numcore::RandomStream::new("t", 5);
        let mut vec = || -> Vec<f32> { (0..n).map(|_| s.uniform(-2.0, 2.0)).collect() };
        let (a, b, d, sc) = (vec(), vec(), vec(), vec());
        let mut g = Graph::standalone();
        let an = g.constant(DenseArray::vector(a.clone()));
        let bn = g.constant(DenseArray::vector(b.clone()));
        let dn = g.constant(DenseArray::vector(d.clone()));
        let sn = g.constant(DenseArray::vector(sc.clone()));
        let row = |v: &[f32], r: usize| -> (f64, Vec<f64>) {
            let chunk = &v[r * (1 + m)..(r + 1) * (1 + m)];
            (chunk[0] as f64, chunk[1..].iter().map(|x| *x as f64).collect())
        };

        let ce = ce_batch(&mut g, sn, batch, m).unwrap();
        let want: f64 = (0..batch).map(|r| { let (p, ng) = row(&sc, r); ce_loss(p, &ng) }).sum::<f64>() / batch as f64;
        assert!(close(g.value(ce).item() as f64, want, 1e-5));

        for conv in [Convention::AsWritten, Convention::Motivation] {
            let t = triplet_batch(&mut g, an, bn, batch, m, conv).unwrap();
            // Reuse the /q slot: A = d_qi_q, B = d_ui_q.
            let want: f64 = (0..batch)
                .map(|r| {
                    let (pa, na) = row(&a, r);
                    let (pb, nb) = row(&b, r);
                    let pos = DeltaSet::from_deltas(pb, pa, 0.0, 0.0);
                    let negs: Vec<DeltaSet> =
                        na.iter().zip(&nb).map(|(x, y)| DeltaSet::from_deltas(*y, *x, 0.0, 0.0)).collect();
                    cf_triplet_loss(&pos, &negs, conv).unwrap()[0]
                })
                .sum::<f64>()
                / batch as f64;
            assert!(close(g.value(t).item() as f64, want, 1e-5), "{conv}");
        }

        let c = constraint_batch(&mut g, dn, batch, m).unwrap();
        let want: f64 = (0..batch)
            .map(|r| {
                let (p, ng) = row(&d, r);
                let negs: Vec<DeltaSet> = ng.iter().map(|x| DeltaSet::from_deltas(*x, 0.0, 0.0, 0.0)).collect();
                constraint_loss(&DeltaSet::from_deltas(p, 0.0, 0.0, 0.0), &negs).unwrap()[0]
            })
            .sum::<f64>()
            / batch as f64;
        assert!(close(g.value(c).item() as f64, want, 1e-5));

        let conf: Vec<f32> = vec![0.3, -1.0, 2.0];
        let cn = g.constant(DenseArray::vector(conf.clone()));
        let rows: Vec<AugRow> = (0..batch)
            .map(|r| {
                let (p, ng) = row(&sc, r);
                AugRow {
                    pos: p,
                    negs: ng,
                    confidence: conf[r] as f64,
                }
            })
            .collect();
        for w in [DaWeighting::Detached, DaWeighting::Through, DaWeighting::Uniform] {
            let l = da_batch(&mut g, sn, cn, batch, m, w).unwrap();
            assert!(close(g.value(l).item() as f64, da_loss(&rows, w).unwrap(), 1e-5));
        }
    }

    #[test]
    fn detached_confidence_gets_no_gradient() {
        let (batch, m) = (2, 1);
        for (weighting, expect_grad) in [(DaWeighting::Detached, false), (DaWeighting::Through, true)] {
            let mut g = Graph::standalone();
            let scores = g.variable(DenseArray::vector(vec![0.5, 0.1, -0.3, 0.8]));
            let conf = g.variable(DenseArray::vector(vec![0.2, 1.1]));
            let l = da_batch(&mut g, scores, conf, batch, m, weighting).unwrap();
            let back = g.backward(l).unwrap();
            let gc = back.variable(conf);
            let nonzero = gc.is_some_and(|v| v.data().iter().any(|x| *x != 0.0));
            assert_eq!(nonzero, expect_grad);
        }
    }
}
