mod common;

use std::collections::BTreeSet;

use clardrec::backbones::domain_params;
use clardrec::datahub::Domain;
use clardrec::evalkit::compute_metrics;
use clardrec::fusionhead::fuse_vectors;
use clardrec::numcore::{Graph, RandomStream};
use clardrec::objectives::ce_loss;
use clardrec::trainer::{loss_and_gradients, LossSettings};
use common::*;
use proptest::prelude::*;

#[test]
fn views_average_back_over_a_thousand_items() {
    let split = toy_split(400, 1500, 3);
    let n = split.catalog.n_items();
    assert!(n > 1000, "catalog has {n} items");
    let cfg = small_config(&[]);
    let (mut store, model) = build(&cfg, &split);
    spread_embeddings(&mut store, 0.5, 4);
    let mut s = RandomStream::new("items", 0);
    let items: Vec<u32> = (0..1000).map(|_| 1 + s.below(n as u64 - 1) as u32).collect();

    let mut g = Graph::inference(&store);
    let e = model.tables.compose_items(&mut g, &split.catalog, &items).unwrap();
    let (iq, iu, gate) = model.disentangler.split(&mut g, e).unwrap();
    let (e, iq, iu) = (g.value(e), g.value(iq), g.value(iu));
    let worst = e
        .data()
        .iter()
        .zip(iq.data().iter().zip(iu.data()))
        .map(|(x, (a, b))| ((a + b) / 2.0 - x).abs())
        .fold(0.0f32, f32::max);
    assert!(worst <= 1e-6, "max deviation {worst}");

    let (z, m) = (g.value(gate.z), g.value(gate.m));
    assert!(z.data().iter().any(|v| (v - 0.5).abs() > 0.05), "gates should not all sit at the midpoint");
    for (a, b) in z.data().iter().zip(m.data()) {
        assert_eq!(*b, 1.0 - a);
        assert!((0.0..=1.0).contains(a));
    }
}

#[test]
fn domain_parameter_names_are_disjoint_for_every_backbone() {
    let split = toy_split(20, 50, 1);
    for backbone in ["mlp", "mmoe"] {
        let cfg = small_config(&[&format!("backbone={backbone}")]);
        let (store, _) = build(&cfg, &split);
        let names = |d| -> BTreeSet<String> {
            domain_params(&store, d).into_iter().map(|p| store.entry(p).name.clone()).collect()
        };
        let (rec, src) = (names(Domain::Rec), names(Domain::Src));
        assert!(!rec.is_empty() && !src.is_empty());
        assert!(rec.is_disjoint(&src), "{backbone}");
    }
}

fn drops() -> impl Strategy<Value = Vec<&'static str>> {
    proptest::sample::subsequence(vec!["CD", "FA", "DA", "CS"], 0..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ablations_zero_exactly_their_components(drop in drops(), seed in 0u64..1000) {
        let split = toy_split(20, 50, 2);
        let full_cfg = small_config(&[&format!("seed={seed}")]);
        let mut extra = vec![format!("seed={seed}")];
        if !drop.is_empty() {
            extra.push(format!("ablations={}", drop.join(",")));
        }
        let cfg = small_config(&extra.iter().map(String::as_str).collect::<Vec<_>>());
        let (store, model) = build(&cfg, &split);
        let batch = first_batch(&cfg, &split);
        let (r, _) = loss_and_gradients(&model, &store, &split, &batch, &LossSettings::of(&cfg)).unwrap();
        let (full_store, full_model) = build(&full_cfg, &split);
        let (f, _) = loss_and_gradients(&full_model, &full_store, &split, &batch, &LossSettings::of(&full_cfg)).unwrap();

        let cd = drop.contains(&"CD");
        prop_assert_eq!(r.cd == [0.0; 4], cd);
        prop_assert_eq!(r.con == [0.0; 4], cd);
        prop_assert_eq!(r.da == 0.0, drop.contains(&"DA"));
        prop_assert!(r.src > 0.0);
        if !cd && !drop.contains(&"FA") {
            prop_assert_eq!(r.cd, f.cd);
            prop_assert_eq!(r.con, f.con);
        }
        if !drop.contains(&"FA") && !drop.contains(&"CD") {
            prop_assert_eq!(r.rec, f.rec);
        }
    }

    #[test]
    fn fused_rows_stay_between_their_inputs(
        pair in proptest::collection::vec((-10.0f32..10.0, -10.0f32..10.0), 1..32),
        gate in 0.0f32..=1.0,
    ) {
        let (a, b): (Vec<f32>, Vec<f32>) = pair.into_iter().unzip();
        let f = fuse_vectors(&a, &b, gate);
        for ((x, y), v) in a.iter().zip(&b).zip(&f) {
            let (lo, hi) = (x.min(*y), x.max(*y));
            prop_assert!(*v >= lo - 1e-5 && *v <= hi + 1e-5);
        }
    }

    #[test]
    fn cross_entropy_is_shift_invariant_and_bounded(
        pos in -20.0f64..20.0,
        negs in proptest::collection::vec(-20.0f64..20.0, 1..8),
        shift in -50.0f64..50.0,
    ) {
        let l = ce_loss(pos, &negs);
        let shifted: Vec<f64> = negs.iter().map(|n| n + shift).collect();
        prop_assert!(l >= 0.0);
        prop_assert!((l - ce_loss(pos + shift, &shifted)).abs() < 1e-9);
        let higher = ce_loss(pos + 1.0, &negs);
        prop_assert!(higher <= l);
    }

    #[test]
    fn metrics_are_bounded_and_ordered(ranks in proptest::collection::vec(1usize..=100, 1..200)) {
        let t = compute_metrics(&ranks).unwrap();
        prop_assert!(t.hr1 <= t.ndcg5 + 1e-12);
        prop_assert!(t.ndcg5 <= t.hr5 + 1e-12);
        prop_assert!(t.hr1 <= t.mrr + 1e-12);
        for v in t.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
