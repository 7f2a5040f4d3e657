//! Epoch loop with validation, early stopping and resumable state.

use std::borrow::Cow;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use super::model::{ClardRec, ModelSpec};
use super::step::{train_step, LossSettings};
use crate::datahub::{BatchPlanner, NegativeIndex, SplitDataset};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalNegatives, MetricTable, Partition};
use crate::numcore::checkpoint::{load_store, save_store};
use crate::numcore::{Adam, ParameterStore};
use crate::objectives::LossReport;

/// Stops after `patience` consecutive epochs without strict improvement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub since: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since: 0,
        }
    }

    /// Records the validation value of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> Verdict {
        let improved = self.best.is_none_or(|b| value > b);
        if improved {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.since = 0;
        } else {
            self.since += 1;
        }
        Verdict {
            improved,
            stop: self.since >= self.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossReport,
    pub val: MetricTable,
}

/// Everything beyond the parameters needed to continue a run exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub stopper: EarlyStopping,
    pub adam: Adam,
    pub planner: BatchPlanner,
    pub history: Vec<EpochLog>,
    pub finished: bool,
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Directory for the training log, checkpoints and resumable state.
    pub out: Option<PathBuf>,
    /// Continue from the state in `out` when present.
    pub resume: bool,
    /// Return after this many epochs in total, leaving the run resumable.
    pub halt_after: Option<usize>,
}

pub struct FitResult {
    pub model: ClardRec,
    /// Parameters of the best validation epoch.
    pub store: ParameterStore,
    /// Parameters after the last completed epoch.
    pub last: ParameterStore,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: MetricTable,
    pub finished: bool,
}

pub const STATE_FILE: &str = "state.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "checkpoint/best.json";
const CURRENT_CHECKPOINT: &str = "checkpoint/current.json";

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len().max(1) as f64;
    let mut m = LossReport::default();
    for r in reports {
        m.rec += r.rec / n;
        m.src += r.src / n;
        m.da += r.da / n;
        m.total += r.total / n;
        for k in 0..4 {
            m.cd[k] += r.cd[k] / n;
            m.con[k] += r.con[k] / n;
        }
    }
    m
}

/// The training split a variant actually uses.
pub fn training_split<'a>(cfg: &ExperimentConfig, split: &'a SplitDataset) -> Cow<'a, SplitDataset> {
    if cfg.variant == Variant::Aug {
        Cow::Owned(split.with_search_as_rec())
    } else {
        Cow::Borrowed(split)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(value)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Log(Option<BufWriter<File>>);

impl Log {
    fn open(out: Option<&Path>, append: bool) -> Result<Self> {
        let Some(dir) = out else { return Ok(Self(None)) };
        let path = dir.join(LOG_FILE);
        let file = fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self(Some(BufWriter::new(file))))
    }

    fn line(&mut self, value: serde_json::Value) -> Result<()> {
        if let Some(w) = &mut self.0 {
            writeln!(w, "{value}").and_then(|_| w.flush()).map_err(|e| Error::io(LOG_FILE, e))?;
        }
        Ok(())
    }
}

/// Trains `cfg` on `split`, validating after every epoch against the
/// cached negatives, and returns the best-validation parameters.
pub fn fit(cfg: &ExperimentConfig, split: &SplitDataset, negatives: &EvalNegatives, opts: &FitOptions) -> Result<FitResult> {
    cfg.validate()?;
    if split.scenario != cfg.scenario {
        return Err(Error::Config(format!(
            "dataset was prepared for the {} scenario, config asks for {}",
            split.scenario, cfg.scenario
        )));
    }
    let data = training_split(cfg, split);
    if data.rec_train.is_empty() {
        return Err(Error::Config("no recommendation training data".into()));
    }
    let settings = LossSettings::of(cfg);
    let mut store = ParameterStore::new();
    let model = ClardRec::build(&mut store, ModelSpec::new(&data.catalog, cfg), cfg.mode(), cfg.seed)?;
    let index = NegativeIndex::new(&data);
    let mut best = store.clone();
    let mut state = TrainState {
        epoch: 0,
        stopper: EarlyStopping::new(cfg.patience),
        adam: Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
        planner: BatchPlanner::new(cfg.batch_size, cfg.negatives, cfg.seed)?,
        history: Vec::new(),
        finished: false,
    };
    let out = opts.out.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("checkpoint")).map_err(|e| Error::io(dir, e))?;
    }
    let mut resumed = false;
    if let (Some(dir), true) = (out, opts.resume) {
        let path = dir.join(STATE_FILE);
        if path.exists() {
            let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            state = serde_json::from_slice(&text)
                .map_err(|e| Error::Checkpoint(format!("bad training state {}: {e}", path.display())))?;
            load_store(&mut store, &dir.join(CURRENT_CHECKPOINT))?;
            load_store(&mut best, &dir.join(BEST_CHECKPOINT))?;
            resumed = true;
            log::info!("resuming {} after epoch {}", cfg.label(), state.epoch);
        }
    }
    let mut log = Log::open(out, resumed)?;

    while !state.finished && state.epoch < cfg.max_epochs {
        if opts.halt_after.is_some_and(|h| state.epoch >= h) {
            break;
        }
        let epoch = state.epoch + 1;
        let batches = state.planner.epoch(&data, &index)?;
        let mut reports = Vec::with_capacity(batches.len());
        for (k, batch) in batches.iter().enumerate() {
            let r = train_step(&model, &mut store, &mut state.adam, &data, batch, &settings, cfg.lr)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} step {}: {m}", k + 1)),
                    other => other,
                })?;
            log.line(serde_json::json!({"kind": "step", "epoch": epoch, "step": k + 1, "loss": r}))?;
            reports.push(r);
        }
        let val = evaluate(&model, &store, split, negatives, Partition::Val, cfg.eval_batch)?;
        let verdict = state.stopper.observe(epoch, val.get(cfg.val_metric));
        if verdict.improved {
            best.clone_from(&store);
        }
        let entry = EpochLog {
            epoch,
            steps: reports.len(),
            mean: mean_report(&reports),
            val,
        };
        log::info!("{} epoch {epoch}: loss {:.4} val {}", cfg.label(), entry.mean.total, val);
        log.line(serde_json::json!({"kind": "epoch", "log": entry}))?;
        state.history.push(entry);
        state.epoch = epoch;
        state.finished = verdict.stop || epoch >= cfg.max_epochs;
        if let Some(dir) = out {
            save_store(&store, &dir.join(CURRENT_CHECKPOINT))?;
            if verdict.improved {
                save_store(&best, &dir.join(BEST_CHECKPOINT))?;
            }
            write_json(&dir.join(STATE_FILE), &state)?;
        }
    }
    let best_epoch = state.stopper.best_epoch;
    let best_val = state
        .history
        .iter()
        .find(|e| e.epoch == best_epoch)
        .map(|e| e.val)
        .unwrap_or_default();
    Ok(FitResult {
        model,
        store: best,
        last: store,
        history: state.history,
        best_epoch,
        best_val,
        finished: state.finished,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::testutil::toy_split;

    fn script(patience: usize, values: &[f64]) -> (usize, usize) {
        let mut s = EarlyStopping::new(patience);
        for (k, v) in values.iter().enumerate() {
            if s.observe(k + 1, *v).stop {
                return (k + 1, s.best_epoch);
            }
        }
        (values.len(), s.best_epoch)
    }

    #[test]
    fn patience_scripts() {
        let mut h = vec![0.5, 0.4];
        h.extend([0.4; 10]);
        h.push(0.9);
        assert_eq!(script(10, &h), (11, 1));
        assert_eq!(script(1, &[0.5, 0.6, 0.55]), (3, 2));
        assert_eq!(script(2, &[0.5, 0.5, 0.6, 0.6, 0.6]), (5, 3));
    }

    fn cfg(extra: &[&str]) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["d_e=4", "d_h=8", "l_b=2", "l_e=2", "batch_size=32", "max_epochs=4", "patience=2"])
            .unwrap();
        c.apply_overrides(extra).unwrap();
        c
    }

    #[test]
    fn identical_runs_give_identical_best_checkpoints() {
        let split = toy_split(30, 120, 1);
        let negs = EvalNegatives::sample(&split, 0).unwrap();
        let a = fit(&cfg(&[]), &split, &negs, &FitOptions::default()).unwrap();
        let b = fit(&cfg(&[]), &split, &negs, &FitOptions::default()).unwrap();
        assert_eq!(a.store.fingerprint(), b.store.fingerprint());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let split = toy_split(30, 120, 2);
        let negs = EvalNegatives::sample(&split, 0).unwrap();
        let c = cfg(&["patience=10"]);
        let whole = fit(&c, &split, &negs, &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = FitOptions {
            out: Some(dir.path().to_path_buf()),
            resume: true,
            halt_after: Some(2),
        };
        let part = fit(&c, &split, &negs, &first).unwrap();
        assert!(!part.finished && part.history.len() == 2);
        let rest = FitOptions {
            halt_after: None,
            ..first
        };
        let resumed = fit(&c, &split, &negs, &rest).unwrap();
        assert_eq!(resumed.history, whole.history);
        assert_eq!(resumed.store.fingerprint(), whole.store.fingerprint());
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().filter(|l| l.contains("\"kind\":\"epoch\"")).count(), 4);
    }

    #[test]
    fn aug_variant_trains_on_the_union() {
        let split = toy_split(30, 120, 3);
        let c = cfg(&["variant=aug"]);
        let data = training_split(&c, &split);
        assert!(data.src_train.is_empty());
        assert!(data.rec_train.len() > split.rec_train.len());
        assert!(data.rec_train.len() <= split.rec_train.len() + split.src_train.len());
    }

    #[test]
    fn scenario_mismatch_is_rejected() {
        let split = toy_split(30, 120, 3);
        let negs = EvalNegatives::sample(&split, 0).unwrap();
        let c = cfg(&["scenario=sequential", "backbone=gru"]);
        assert!(matches!(fit(&c, &split, &negs, &FitOptions::default()), Err(Error::Config(_))));
    }
}
