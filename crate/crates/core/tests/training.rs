mod common;

use std::collections::HashSet;

use clardrec::datahub::{BatchPlanner, NegativeIndex};
use clardrec::evalkit::{evaluate, EvalNegatives, Partition};
use clardrec::numcore::checkpoint::load_store;
use clardrec::numcore::{Adam, ParameterStore};
use clardrec::trainer::{fit, train_step, training_split, ClardRec, FitOptions, LossSettings, ModelSpec, BEST_CHECKPOINT};
use common::*;

#[test]
fn loss_falls_within_fifty_steps_on_a_small_log() {
    let split = toy_split(30, 60, 5);
    let n = split.rec_train.len() + split.src_train.len();
    assert!((120..=400).contains(&n), "{n} interactions");
    let cfg = small_config(&["batch_size=512"]);
    let (mut store, model) = build(&cfg, &split);
    let mut adam = Adam::new(0.9, 0.999, 1e-8);
    let batch = BatchPlanner::new(cfg.batch_size, cfg.negatives, cfg.seed)
        .unwrap()
        .epoch(&split, &NegativeIndex::new(&split))
        .unwrap()
        .remove(0);
    assert_eq!(batch.rec.len(), split.rec_train.len());
    let settings = LossSettings::of(&cfg);
    let losses: Vec<f64> = (0..50)
        .map(|_| train_step(&model, &mut store, &mut adam, &split, &batch, &settings, cfg.lr).unwrap().total)
        .collect();
    let below = losses[1..].iter().filter(|l| **l < losses[0]).count();
    assert!(below >= 45, "{below}/49 steps below the first ({:?})", &losses[..10]);
}

#[test]
fn identical_seeds_give_bit_identical_runs() {
    let split = toy_split(40, 300, 6);
    let negs = EvalNegatives::sample(&split, 0).unwrap();
    let cfg = small_config(&["max_epochs=3"]);
    let a = fit(&cfg, &split, &negs, &FitOptions::default()).unwrap();
    let b = fit(&cfg, &split, &negs, &FitOptions::default()).unwrap();
    assert_eq!(a.store.fingerprint(), b.store.fingerprint());
    assert_eq!(a.last.fingerprint(), b.last.fingerprint());
    assert_eq!(a.history, b.history);
    let ta = evaluate(&a.model, &a.store, &split, &negs, Partition::Test, 64).unwrap();
    let tb = evaluate(&b.model, &b.store, &split, &negs, Partition::Test, 64).unwrap();
    assert_eq!(ta, tb);

    let other = fit(&small_config(&["max_epochs=3", "seed=1"]), &split, &negs, &FitOptions::default()).unwrap();
    assert_ne!(other.last.fingerprint(), a.last.fingerprint());
}

#[test]
fn reloaded_checkpoint_gives_identical_metrics() {
    let split = toy_split(40, 300, 7);
    let negs = EvalNegatives::sample(&split, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&["max_epochs=3"]);
    let opts = FitOptions {
        out: Some(dir.path().to_path_buf()),
        ..FitOptions::default()
    };
    let run = fit(&cfg, &split, &negs, &opts).unwrap();

    let mut store = ParameterStore::new();
    let model = ClardRec::build(&mut store, ModelSpec::new(&split.catalog, &cfg), cfg.mode(), 99).unwrap();
    assert_ne!(store.fingerprint(), run.store.fingerprint());
    load_store(&mut store, &dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(store.fingerprint(), run.store.fingerprint());
    for p in [Partition::Val, Partition::Test] {
        let want = evaluate(&run.model, &run.store, &split, &negs, p, 64).unwrap();
        let got = evaluate(&model, &store, &split, &negs, p, 64).unwrap();
        assert_eq!(got, want);
    }
}

#[test]
fn aug_training_set_is_the_deduplicated_union() {
    let split = toy_split(60, 90, 8);
    let cfg = small_config(&["variant=aug"]);
    let data = training_split(&cfg, &split);
    let mut pairs: HashSet<(u32, u32)> = split.rec_train.iter().map(|e| (e.user, e.item)).collect();
    let rec_pairs = pairs.len();
    pairs.extend(split.src_train.iter().map(|e| (e.user, e.item)));
    assert_eq!(data.rec_train.len(), split.rec_train.len() + pairs.len() - rec_pairs);
    assert!(data.src_train.is_empty());
    assert!(data.rec_train.iter().all(|e| e.query == 0));

    let plain = training_split(&small_config(&["variant=backbone"]), &split);
    assert_eq!(plain.rec_train.len(), split.rec_train.len());
}
