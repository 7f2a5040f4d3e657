#![allow(dead_code)]

use clardrec::datahub::{preprocess, BatchPlanner, Filters, NegativeIndex, Scenario, SplitDataset, TrainBatch};
use clardrec::numcore::{ParameterStore, RandomStream};
use clardrec::objectives::DaWeighting;
use clardrec::synthgen::{generate, SynthConfig};
use clardrec::trainer::{ClardRec, ExperimentConfig, LossSettings, ModelSpec};

pub fn toy_synth(n_users: usize, n_items: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_users,
        n_items,
        n_queries: n_users * 3,
        d_g: 3,
        d_q: 3,
        click_bias: -1.5,
        impressions: 10,
        seed,
        ..SynthConfig::default()
    }
}

pub fn toy_split(n_users: usize, n_items: usize, seed: u64) -> SplitDataset {
    let ing = generate(&toy_synth(n_users, n_items, seed)).unwrap().ingest().unwrap();
    preprocess(ing.catalog, &ing.records, Scenario::Cf, Filters::default(), seed).unwrap()
}

pub fn small_config(extra: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&["d_e=4", "d_h=8", "l_b=2", "l_e=2", "batch_size=16"]).unwrap();
    cfg.apply_overrides(extra).unwrap();
    cfg
}

pub fn build(cfg: &ExperimentConfig, split: &SplitDataset) -> (ParameterStore, ClardRec) {
    let mut store = ParameterStore::new();
    let model = ClardRec::build(&mut store, ModelSpec::new(&split.catalog, cfg), cfg.mode(), cfg.seed).unwrap();
    (store, model)
}

pub fn first_batch(cfg: &ExperimentConfig, split: &SplitDataset) -> TrainBatch {
    let mut planner = BatchPlanner::new(cfg.batch_size, cfg.negatives, cfg.seed).unwrap();
    planner.epoch(split, &NegativeIndex::new(split)).unwrap().remove(0)
}

/// Redraws every embedding table uniformly in ±`scale` and sharpens the
/// gate networks, moving the point away from hinge and ReLU kinks.
pub fn spread_embeddings(store: &mut ParameterStore, scale: f32, seed: u64) {
    let mut s = RandomStream::new("spread", seed);
    let names: Vec<String> = store.names().map(String::from).collect();
    for n in names {
        let id = store.id(&n).unwrap();
        if n.starts_with("emb/") {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = s.uniform(-scale, scale));
        } else if n.starts_with("gate/") {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= 4.0);
        }
    }
}

// ---- f64 reference of the joint loss for the MLP backbone ----------------

type Mat = Vec<Vec<f64>>;

fn table(store: &ParameterStore, name: &str) -> Mat {
    let a = store.get(name).unwrap();
    let c = a.shape()[1];
    a.data().chunks(c).map(|r| r.iter().map(|v| f64::from(*v)).collect()).collect()
}

fn vector(store: &ParameterStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap().data().iter().map(|v| f64::from(*v)).collect()
}

fn mlp(store: &ParameterStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut k = 1;
    while store.contains(&format!("{prefix}/l{k}/w")) {
        let w = table(store, &format!("{prefix}/l{k}/w"));
        let b = vector(store, &format!("{prefix}/l{k}/b"));
        let mut out = b.clone();
        for (i, xi) in h.iter().enumerate() {
            for (o, wv) in out.iter_mut().zip(&w[i]) {
                *o += xi * wv;
            }
        }
        k += 1;
        if store.contains(&format!("{prefix}/l{k}/w")) {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = out;
    }
    h
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ce(scores: &[f64]) -> f64 {
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
    -(scores[0] - lse) / scores.len() as f64
}

fn nls(x: f64) -> f64 {
    // −ln σ(x)
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn compose(store: &ParameterStore, id_table: &str, attr_prefix: &str, attrs: &[Vec<u32>], i: u32) -> Vec<f64> {
    let mut v = table(store, id_table)[i as usize].clone();
    let mut k = 1;
    while store.contains(&format!("{attr_prefix}{k}")) {
        let a = attrs[i as usize][k - 1];
        v.extend(table(store, &format!("{attr_prefix}{k}"))[a as usize].iter());
        k += 1;
    }
    v
}

struct Item {
    rec: Vec<f64>,
    src: Vec<f64>,
    q: Vec<f64>,
    u: Vec<f64>,
    fused: Vec<f64>,
}

fn item(store: &ParameterStore, split: &SplitDataset, i: u32, cfg: &ExperimentConfig) -> Item {
    let mode = cfg.mode();
    let e = compose(store, "emb/item_id", "emb/i_attr_", &split.catalog.item_attrs, i);
    let d_e = cfg.d_e;
    let mut z: Vec<f64> = mlp(store, "gate/id", &e).into_iter().map(sigmoid).collect();
    if store.contains("gate/attr/l1/w") {
        for a in mlp(store, "gate/attr", &e) {
            z.extend(std::iter::repeat_n(sigmoid(a), d_e));
        }
    }
    let eq: Vec<f64> = e.iter().zip(&z).map(|(x, z)| 2.0 * z * x).collect();
    let eu: Vec<f64> = e.iter().zip(&z).map(|(x, z)| 2.0 * (1.0 - z) * x).collect();
    let rec = mlp(store, "rec/item", &e);
    let src = mlp(store, "src/item", &e);
    let (q, u) = if mode.disentangle {
        (mlp(store, "src/item", &eq), mlp(store, "src/item", &eu))
    } else {
        (src.clone(), src.clone())
    };
    let fused = if mode.fusion {
        let joined: Vec<f64> = rec.iter().chain(&q).copied().collect();
        let g = sigmoid(mlp(store, "fusion", &joined)[0]);
        rec.iter().zip(&q).map(|(a, b)| g * a + (1.0 - g) * b).collect()
    } else {
        rec.clone()
    };
    Item { rec, src, q, u, fused }
}

fn user(store: &ParameterStore, split: &SplitDataset, u: u32, domain: &str) -> Vec<f64> {
    let e = compose(store, "emb/user_id", "emb/u_attr_", &split.catalog.user_attrs, u);
    mlp(store, &format!("{domain}/user"), &e)
}

fn query(store: &ParameterStore, split: &SplitDataset, q: u32) -> Vec<f64> {
    let words = table(store, "emb/word");
    let toks = split.catalog.query_tokens(q);
    let mut v = vec![0.0; words[0].len()];
    for t in toks {
        for (a, b) in v.iter_mut().zip(&words[*t as usize]) {
            *a += b / toks.len() as f64;
        }
    }
    v
}

/// Independent f64 evaluation of the joint loss for an MLP-backbone model
/// in the collaborative-filtering scenario.
pub fn reference_loss(store: &ParameterStore, split: &SplitDataset, batch: &TrainBatch, cfg: &ExperimentConfig) -> f64 {
    let s = LossSettings::of(cfg);
    let w = s.weights;
    let c = s.convention.sign();
    let mode = cfg.mode();
    let mut rec = 0.0;
    for t in &batch.rec {
        let u = user(store, split, t.example.user, "rec");
        let scores: Vec<f64> = std::iter::once(t.example.item)
            .chain(t.negatives.iter().copied())
            .map(|i| dot(&u, &item(store, split, i, cfg).fused))
            .collect();
        rec += ce(&scores) / batch.rec.len() as f64;
    }
    if !(mode.use_src && w.lambda > 0.0) || batch.src.is_empty() {
        return rec;
    }
    let bs = batch.src.len() as f64;
    let (mut src, mut cd, mut con) = (0.0, 0.0, 0.0);
    let mut da_rows = Vec::new();
    for t in &batch.src {
        let us = user(store, split, t.example.user, "src");
        let q = query(store, split, t.example.query);
        let items: Vec<Item> = std::iter::once(t.example.item)
            .chain(t.negatives.iter().copied())
            .map(|i| item(store, split, i, cfg))
            .collect();
        let s_ui: Vec<f64> = items.iter().map(|it| dot(&us, &it.src)).collect();
        let s_qi: Vec<f64> = items.iter().map(|it| dot(&q, &it.src)).collect();
        src += (ce(&s_ui) + ce(&s_qi)) / bs;
        let s_ui_q: Vec<f64> = items.iter().map(|it| dot(&us, &it.q)).collect();
        if mode.disentangle {
            let m = (items.len() - 1) as f64;
            let mut deltas = Vec::new();
            for (k, it) in items.iter().enumerate() {
                let d_ui_q = dot(&us, &it.q) - s_ui[k];
                let d_qi_q = dot(&q, &it.q) - s_qi[k];
                let d_ui_u = dot(&us, &it.u) - s_ui[k];
                let d_qi_u = dot(&q, &it.u) - s_qi[k];
                deltas.push([d_ui_q, d_qi_q, d_ui_u, d_qi_u]);
            }
            let pairs = [(1, 0), (2, 3), (1, 3), (2, 0)];
            for (a, b) in pairs {
                let mut l = nls(c * (deltas[0][a] - deltas[0][b]));
                for dn in &deltas[1..] {
                    l += nls(-c * (dn[a] - dn[b])) / m;
                }
                cd += l / bs;
            }
            for k in [0, 2, 1, 3] {
                let mut l = deltas[0][k].max(0.0);
                for dn in &deltas[1..] {
                    l += (-dn[k]).max(0.0) / m;
                }
                con += l / bs;
            }
        }
        if w.beta > 0.0 {
            let ur = user(store, split, t.example.user, "rec");
            let aug: Vec<f64> = items.iter().map(|it| dot(&ur, &it.q)).collect();
            da_rows.push((ce(&aug), s_ui_q[0]));
        }
    }
    let mut da = 0.0;
    if !da_rows.is_empty() {
        let weights: Vec<f64> = match s.weighting {
            DaWeighting::Uniform => vec![1.0 / da_rows.len() as f64; da_rows.len()],
            _ => {
                let mx = da_rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = da_rows.iter().map(|r| (r.1 - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            }
        };
        da = da_rows.iter().zip(weights).map(|(r, w)| w * r.0).sum();
    }
    rec + w.lambda * (src + w.alpha * cd + w.beta * da + w.gamma * con)
}

/// Coordinate-wise central differences on the largest-gradient and a few
/// random entries of every trainable array. The step is measured on the
/// stored `f32` values so rounding of the perturbation does not bias the
/// quotient.
pub fn coordinate_check(
    store: &mut ParameterStore,
    grads: &clardrec::numcore::Gradients,
    h: f32,
    per_entry: usize,
    loss: impl Fn(&ParameterStore) -> f64,
) -> clardrec::numcore::gradcheck::GradCheck {
    use clardrec::numcore::gradcheck::GradCheck;
    let mut report = GradCheck::default();
    let mut pick = RandomStream::new("coordinates", 0);
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let id = store.id(&name).unwrap();
        let n = store.value(id).len();
        let g: Vec<f32> = grads.get(id).map_or(vec![0.0; n], |a| a.data().to_vec());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| g[*b].abs().total_cmp(&g[*a].abs()));
        let mut coords: Vec<usize> = order.into_iter().take(per_entry).collect();
        coords.extend((0..per_entry).map(|_| pick.below(n as u64) as usize));
        for k in coords {
            let x = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = x + h;
            let (xp, lp) = (store.value(id).data()[k], loss(store));
            store.value_mut(id).data_mut()[k] = x - h;
            let (xm, lm) = (store.value(id).data()[k], loss(store));
            store.value_mut(id).data_mut()[k] = x;
            let numeric = (lp - lm) / (f64::from(xp) - f64::from(xm));
            let analytic = f64::from(g[k]);
            report.record(|| format!("{name}[{k}]"), analytic, numeric);
        }
    }
    report
}
