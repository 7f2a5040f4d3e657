//! One joint optimisation step over a recommendation and a search
//! sub-batch.

use super::config::ExperimentConfig;
use super::model::ClardRec;
use crate::datahub::{Example, SplitDataset, TrainBatch, Tuple};
use crate::error::{Error, Result};
use crate::numcore::{Adam, Gradients, Graph, NodeId, ParameterStore};
use crate::objectives::{
    ce_batch, constraint_batch, da_batch, positive_rows, total_loss, triplet_batch, Convention, DaWeighting,
    LossReport, LossWeights,
};

/// Loss weights and switches after variant and ablation rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub weights: LossWeights,
    pub convention: Convention,
    pub weighting: DaWeighting,
}

impl LossSettings {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            weights: cfg.effective_weights(),
            convention: cfg.convention,
            weighting: cfg.da_weighting(),
        }
    }
}

fn candidates(tuples: &[Tuple]) -> impl Iterator<Item = u32> + '_ {
    tuples
        .iter()
        .flat_map(|t| std::iter::once(t.example.item).chain(t.negatives.iter().copied()))
}

/// Row `b` repeated once per candidate.
fn expand(batch: usize, m: usize) -> Vec<u32> {
    (0..batch as u32).flat_map(|b| std::iter::repeat_n(b, 1 + m)).collect()
}

fn negatives_per_tuple(batch: &TrainBatch) -> Result<usize> {
    let mut all = batch.rec.iter().chain(&batch.src).map(|t| t.negatives.len());
    let m = all.next().ok_or_else(|| Error::Contract("empty training batch".into()))?;
    if m == 0 || all.any(|n| n != m) {
        return Err(Error::Contract("every tuple must carry the same positive number of negatives".into()));
    }
    Ok(m)
}

fn add_weighted(g: &mut Graph, acc: NodeId, term: NodeId, w: f64) -> Result<NodeId> {
    let t = if w == 1.0 { term } else { g.scale(term, w as f32)? };
    g.add(acc, t)
}

/// Builds every loss term on `g` and returns the total node with its report.
pub fn forward_losses(
    g: &mut Graph,
    model: &ClardRec,
    split: &SplitDataset,
    batch: &TrainBatch,
    s: &LossSettings,
) -> Result<(NodeId, LossReport)> {
    if batch.rec.is_empty() {
        return Err(Error::Contract("training batch has no recommendation tuples".into()));
    }
    let m = negatives_per_tuple(batch)?;
    let w = s.weights;
    let use_src = model.mode.use_src && w.lambda > 0.0 && !batch.src.is_empty();
    let catalog = &split.catalog;

    let mut items: Vec<u32> = candidates(&batch.rec).collect();
    if use_src {
        items.extend(candidates(&batch.src));
    }
    items.sort_unstable();
    items.dedup();
    let local = |tuples: &[Tuple]| -> Vec<u32> {
        candidates(tuples)
            .map(|i| items.binary_search(&i).expect("collected above") as u32)
            .collect()
    };
    let views = model.item_views(g, catalog, &items)?;
    let mut report = LossReport::default();

    let rec_ex: Vec<Example> = batch.rec.iter().map(|t| t.example).collect();
    let br = rec_ex.len();
    let u_rec = model.user_rec(g, split, &rec_ex)?;
    let (score_items, _) = model.scoring_items(g, views.i_rec, views.i_q)?;
    let it = g.gather(score_items, &local(&batch.rec))?;
    let ue = g.gather(u_rec, &expand(br, m))?;
    let r = g.dot(ue, it)?;
    let l_rec = ce_batch(g, r, br, m)?;
    report.rec = f64::from(g.value(l_rec).item());
    let mut total = l_rec;

    if use_src {
        let (i_src, i_q) = match (views.i_src, views.i_q) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Contract("search views missing while the search side is on".into())),
        };
        let src_ex: Vec<Example> = batch.src.iter().map(|t| t.example).collect();
        let bs = src_ex.len();
        let idx = local(&batch.src);
        let exp = expand(bs, m);
        let u_src = model.user_src(g, split, &src_ex)?;
        let queries: Vec<u32> = src_ex.iter().map(|e| e.query).collect();
        let q_src = model.tables.encode_queries(g, catalog, &queries)?;
        let ue = g.gather(u_src, &exp)?;
        let qe = g.gather(q_src, &exp)?;
        let is = g.gather(i_src, &idx)?;
        let s_ui = g.dot(ue, is)?;
        let s_qi = g.dot(qe, is)?;
        let a = ce_batch(g, s_ui, bs, m)?;
        let b = ce_batch(g, s_qi, bs, m)?;
        let l_src = g.add(a, b)?;
        report.src = f64::from(g.value(l_src).item());
        let mut inner = l_src;

        let iq = g.gather(i_q, &idx)?;
        let s_ui_q = g.dot(ue, iq)?;
        if let (true, Some(i_u)) = (model.mode.disentangle, views.i_u) {
            let iu = g.gather(i_u, &idx)?;
            let s_qi_q = g.dot(qe, iq)?;
            let s_ui_u = g.dot(ue, iu)?;
            let s_qi_u = g.dot(qe, iu)?;
            let d_ui_q = g.sub(s_ui_q, s_ui)?;
            let d_qi_q = g.sub(s_qi_q, s_qi)?;
            let d_ui_u = g.sub(s_ui_u, s_ui)?;
            let d_qi_u = g.sub(s_qi_u, s_qi)?;
            let pairs = [(d_qi_q, d_ui_q), (d_ui_u, d_qi_u), (d_qi_q, d_qi_u), (d_ui_u, d_ui_q)];
            for (k, (x, y)) in pairs.into_iter().enumerate() {
                let l = triplet_batch(g, x, y, bs, m, s.convention)?;
                report.cd[k] = f64::from(g.value(l).item());
                if w.alpha > 0.0 {
                    inner = add_weighted(g, inner, l, w.alpha)?;
                }
            }
            for (k, d) in [d_ui_q, d_ui_u, d_qi_q, d_qi_u].into_iter().enumerate() {
                let l = constraint_batch(g, d, bs, m)?;
                report.con[k] = f64::from(g.value(l).item());
                if w.gamma > 0.0 {
                    inner = add_weighted(g, inner, l, w.gamma)?;
                }
            }
        }

        if w.beta > 0.0 {
            let u_rec_s = model.user_rec(g, split, &src_ex)?;
            let ure = g.gather(u_rec_s, &exp)?;
            let aug = g.dot(ure, iq)?;
            let col = g.reshape(s_ui_q, vec![bs * (1 + m), 1])?;
            let conf = g.gather(col, &positive_rows(bs, m))?;
            let conf = g.reshape(conf, vec![bs])?;
            let l_da = da_batch(g, aug, conf, bs, m, s.weighting)?;
            report.da = f64::from(g.value(l_da).item());
            inner = add_weighted(g, inner, l_da, w.beta)?;
        }
        total = add_weighted(g, total, inner, w.lambda)?;
    }

    report.total = total_loss(&report, &w).map_err(|e| dump(e, &report))?;
    let graph_total = f64::from(g.value(total).item());
    if !graph_total.is_finite() {
        return Err(dump(Error::Numeric("total loss is not finite".into()), &report));
    }
    Ok((total, report))
}

fn dump(e: Error, report: &LossReport) -> Error {
    let parts: Vec<String> = report.components().iter().map(|(n, v)| format!("{n}={v}")).collect();
    Error::Numeric(format!("{e}; components: {}", parts.join(" ")))
}

/// Loss and parameter gradients for one batch, without updating anything.
pub fn loss_and_gradients(
    model: &ClardRec,
    store: &ParameterStore,
    split: &SplitDataset,
    batch: &TrainBatch,
    s: &LossSettings,
) -> Result<(LossReport, Gradients)> {
    let mut g = Graph::new(store);
    let (total, report) = forward_losses(&mut g, model, split, batch, s)?;
    let back = g.backward(total)?;
    Ok((report, back.params))
}

/// Total loss only, evaluated without recording.
pub fn loss_value(
    model: &ClardRec,
    store: &ParameterStore,
    split: &SplitDataset,
    batch: &TrainBatch,
    s: &LossSettings,
) -> Result<f64> {
    let mut g = Graph::inference(store);
    let (total, _) = forward_losses(&mut g, model, split, batch, s)?;
    Ok(f64::from(g.value(total).item()))
}

/// Forward, backward and one optimizer update.
pub fn train_step(
    model: &ClardRec,
    store: &mut ParameterStore,
    adam: &mut Adam,
    split: &SplitDataset,
    batch: &TrainBatch,
    s: &LossSettings,
    lr: f64,
) -> Result<LossReport> {
    let (report, grads) = loss_and_gradients(model, store, split, batch, s)?;
    store.zero_grad();
    store.accumulate(&grads);
    adam.step(store, lr)?;
    Ok(report)
}
