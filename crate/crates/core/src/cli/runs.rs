use std::fs;
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalArgs, ExportArgs, RunArgs, SweepArgs, SynthArgs};
use crate::datahub::{ingest, preprocess, IngestOptions, SplitDataset};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, export_representations, render_table, EvalNegatives, MetricTable, Partition};
use crate::numcore::checkpoint::load_store;
use crate::numcore::ParameterStore;
use crate::synthgen::{generate, SynthConfig};
use crate::trainer::{
    fit, grid, parse_ablations, split_override, sweep, sweep_csv, thread_cap, unknown_key, Ablation, ClardRec, DataSource, ExperimentConfig,
    FitOptions, ModelSpec, BEST_CHECKPOINT,
};

/// Seed of the cached 99-negative evaluation candidates. Fixed so that runs
/// with different training seeds rank the same candidates.
pub const EVAL_SEED: u64 = 0;
/// Seed of the 8:1:1 shuffle when a run splits raw logs itself.
pub const SPLIT_SEED: u64 = 0;

pub const CONFIG_FILE: &str = "config.cfg";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

/// What a run read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub label: String,
    pub scenario: String,
    pub backbone: String,
    pub seed: u64,
    pub dataset_fingerprint: String,
    /// Dataset or log paths, relative to the run directory.
    pub data: Vec<String>,
    pub config_sources: Vec<String>,
    pub eval_negatives: Option<String>,
    pub version: String,
}

/// What a training run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub label: String,
    pub scenario: String,
    pub backbone: String,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub best_epoch: usize,
    pub epochs: usize,
    pub finished: bool,
    pub val: MetricTable,
    pub test: MetricTable,
}

/// `path` expressed relative to `base`; unchanged when either cannot be
/// resolved.
pub fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let (Ok(p), Ok(b)) = (path.canonicalize(), base.canonicalize()) else {
        return path.to_path_buf();
    };
    let pc: Vec<Component> = p.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut r = PathBuf::new();
    for _ in common..bc.len() {
        r.push("..");
    }
    for c in &pc[common..] {
        r.push(c);
    }
    if r.as_os_str().is_empty() {
        r.push(".");
    }
    r
}

fn data_fields(d: &mut DataSource) -> [&mut Option<PathBuf>; 5] {
    [&mut d.dataset, &mut d.rec_log, &mut d.src_log, &mut d.user_attrs, &mut d.item_attrs]
}

/// Makes relative data paths that changed since `before` relative to `base`.
fn anchor(cfg: &mut ExperimentConfig, before: &DataSource, base: &Path) {
    let mut old = before.clone();
    for (new, old) in data_fields(&mut cfg.data).into_iter().zip(data_fields(&mut old)) {
        if *new != *old {
            if let Some(p) = new.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
    }
}

/// Applies config files in order, then overrides. Data paths inside a file
/// are relative to that file; paths given as overrides are relative to the
/// working directory.
pub fn load_config<S: AsRef<str>>(files: &[PathBuf], overrides: &[S]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for f in files {
        let before = cfg.data.clone();
        match f.to_str().and_then(|s| s.strip_prefix("preset:")) {
            Some(name) => cfg.apply_text(crate::trainer::preset_text(name)?, f)?,
            None => {
                let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
                cfg.apply_text(&text, f)?;
                anchor(&mut cfg, &before, f.parent().unwrap_or(Path::new(".")));
            }
        }
    }
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

/// Config of a finished run, with its paths resolved.
pub fn resolve_config(run: &Path) -> Result<ExperimentConfig> {
    load_config::<&str>(&[run.join(CONFIG_FILE)], &[])
}

/// The split named by the config: a preprocessed dataset file, or raw logs
/// split with [`SPLIT_SEED`].
pub fn load_split(cfg: &ExperimentConfig) -> Result<SplitDataset> {
    let d = &cfg.data;
    if let Some(p) = &d.dataset {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        let mut split: SplitDataset = serde_json::from_slice(&bytes)?;
        split.catalog.reindex();
        return Ok(split);
    }
    match (&d.rec_log, &d.src_log) {
        (Some(r), Some(s)) => {
            let ing = ingest(r, s, d.user_attrs.as_deref(), d.item_attrs.as_deref(), IngestOptions::default())?;
            log::info!(
                "ingested {} rec and {} src rows, {} malformed",
                ing.report.rec_rows,
                ing.report.src_rows,
                ing.report.malformed_rows
            );
            preprocess(ing.catalog, &ing.records, cfg.scenario, cfg.filters, SPLIT_SEED)
        }
        _ => Err(Error::Config("no data: set `dataset`, or both `rec_log` and `src_log`".into())),
    }
}

/// Where the evaluation negatives of a config are cached: next to the
/// dataset file, else inside the run directory.
pub fn negatives_path(cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    match &cfg.data.dataset {
        Some(p) => p.with_extension("negatives.json"),
        None => out.join("negatives.json"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the frozen config with data paths relative to `out`.
fn freeze(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut frozen = cfg.clone();
    for p in data_fields(&mut frozen.data).into_iter().flatten() {
        *p = relative_to(p, out);
    }
    write_text(&out.join(CONFIG_FILE), &frozen.to_text())
}

fn manifest(
    command: &str,
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    sources: &[PathBuf],
    negatives: Option<&Path>,
    out: &Path,
) -> RunManifest {
    let mut data = cfg.data.clone();
    RunManifest {
        command: command.into(),
        label: cfg.label(),
        scenario: cfg.scenario.to_string(),
        backbone: cfg.encoder.backbone.to_string(),
        seed: cfg.seed,
        dataset_fingerprint: split.fingerprint(),
        data: data_fields(&mut data)
            .into_iter()
            .flatten()
            .map(|p| relative_to(p, out).display().to_string())
            .collect(),
        config_sources: sources.iter().map(|p| p.display().to_string()).collect(),
        eval_negatives: negatives.map(|p| relative_to(p, out).display().to_string()),
        version: env!("CARGO_PKG_VERSION").into(),
    }
}

/// Split and cached negatives for a run writing into `out`.
fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<(SplitDataset, EvalNegatives, PathBuf)> {
    mkdir(out)?;
    let split = load_split(cfg)?;
    let path = negatives_path(cfg, out);
    let negs = EvalNegatives::load_or_sample(&path, &split, EVAL_SEED)?;
    Ok((split, negs, path))
}

pub(super) fn preprocess_cmd(a: &RunArgs) -> Result<()> {
    let mut cfg = load_config(&a.config, &a.overrides(false))?;
    cfg.data.dataset = None;
    let (Some(r), Some(s)) = (&cfg.data.rec_log, &cfg.data.src_log) else {
        return Err(Error::Config("preprocess needs `rec_log` and `src_log`".into()));
    };
    let d = &cfg.data;
    let ing = ingest(r, s, d.user_attrs.as_deref(), d.item_attrs.as_deref(), IngestOptions::default())?;
    let split = preprocess(ing.catalog, &ing.records, cfg.scenario, cfg.filters, a.seed.unwrap_or(SPLIT_SEED))?;
    mkdir(&a.out)?;
    let path = a.out.join("dataset.json");
    write_text(&path, &serde_json::to_string(&split)?)?;
    write_json(&a.out.join("ingest_report.json"), &ing.report)?;
    write_json(&a.out.join("split_stats.json"), &split.stats)?;
    freeze(&cfg, &a.out)?;
    write_json(&a.out.join(MANIFEST_FILE), &manifest("preprocess", &cfg, &split, &a.config, None, &a.out))?;
    println!(
        "{}: {} users, {} items, {} rec train, {} src train, {} val, {} test, fingerprint {}",
        path.display(),
        split.catalog.n_users() - 1,
        split.catalog.n_items() - 1,
        split.rec_train.len(),
        split.src_train.len(),
        split.val_cases.len(),
        split.test_cases.len(),
        &split.fingerprint()[..12]
    );
    Ok(())
}

const SYNTH_KEYS: &[&str] = &[
    "n_users",
    "n_items",
    "n_queries",
    "d_g",
    "d_q",
    "noise",
    "click_bias",
    "query_weight",
    "general_weight",
    "impressions",
    "seed",
];

fn set_synth(cfg: &mut SynthConfig, key: &str, v: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
    }
    match key {
        "n_users" => cfg.n_users = num(key, v)?,
        "n_items" => cfg.n_items = num(key, v)?,
        "n_queries" => cfg.n_queries = num(key, v)?,
        "d_g" => cfg.d_g = num(key, v)?,
        "d_q" => cfg.d_q = num(key, v)?,
        "noise" => cfg.noise = num(key, v)?,
        "click_bias" => cfg.click_bias = num(key, v)?,
        "query_weight" => cfg.query_weight = num(key, v)?,
        "general_weight" => cfg.general_weight = num(key, v)?,
        "impressions" => cfg.impressions = num(key, v)?,
        "seed" => cfg.seed = num(key, v)?,
        _ => return Err(unknown_key(key, SYNTH_KEYS)),
    }
    Ok(())
}

pub(super) fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    for o in &a.set {
        let (k, v) = split_override(o)?;
        set_synth(&mut cfg, &k, &v)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let data = generate(&cfg)?;
    data.write(&a.out)?;
    write_json(&a.out.join("synth.json"), &cfg)?;
    let logs = "rec_log = rec.tsv\nsrc_log = src.tsv\nuser_attrs = user_attrs.tsv\nitem_attrs = item_attrs.tsv\n";
    write_text(&a.out.join("logs.cfg"), logs)?;
    println!(
        "{}: {} rec clicks, {} src clicks",
        a.out.display(),
        data.rec_clicks,
        data.src_clicks
    );
    Ok(())
}

/// Trains one configuration into `out` and writes its test metrics.
pub(crate) fn train_run(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    negs: &EvalNegatives,
    neg_path: &Path,
    sources: &[PathBuf],
    out: &Path,
    resume: bool,
) -> Result<RunMetrics> {
    mkdir(out)?;
    freeze(cfg, out)?;
    write_json(&out.join(MANIFEST_FILE), &manifest("train", cfg, split, sources, Some(neg_path), out))?;
    let opts = FitOptions {
        out: Some(out.to_path_buf()),
        resume,
        halt_after: None,
    };
    let r = fit(cfg, split, negs, &opts)?;
    let test = evaluate(&r.model, &r.store, split, negs, Partition::Test, cfg.eval_batch)?;
    let cat = &split.catalog;
    let ids = serde_json::json!({
        "users": (0..cat.n_users() as u32).map(|i| cat.users.name(i)).collect::<Vec<_>>(),
        "items": (0..cat.n_items() as u32).map(|i| cat.items.name(i)).collect::<Vec<_>>(),
        "words": (0..cat.n_words() as u32).map(|i| cat.words.name(i)).collect::<Vec<_>>(),
    });
    write_json(&out.join("checkpoint").join("ids.json"), &ids)?;
    let m = RunMetrics {
        label: cfg.label(),
        scenario: cfg.scenario.to_string(),
        backbone: cfg.encoder.backbone.to_string(),
        seed: cfg.seed,
        dataset_fingerprint: split.fingerprint(),
        best_epoch: r.best_epoch,
        epochs: r.history.len(),
        finished: r.finished,
        val: r.best_val,
        test,
    };
    write_json(&out.join(METRICS_FILE), &m)?;
    Ok(m)
}

pub(super) fn train_cmd(a: &RunArgs, resume: bool) -> Result<RunMetrics> {
    let cfg = load_config(&a.config, &a.overrides(true))?;
    cfg.validate()?;
    let (split, negs, neg_path) = prepare(&cfg, &a.out)?;
    let m = train_run(&cfg, &split, &negs, &neg_path, &a.config, &a.out, resume)?;
    println!("{} seed {} best epoch {}: test {}", m.label, m.seed, m.best_epoch, m.test);
    Ok(m)
}

/// Model and parameters of a run directory; `checkpoint` defaults to the
/// best checkpoint.
pub fn load_run(run: &Path, checkpoint: Option<&Path>) -> Result<(ExperimentConfig, SplitDataset, ClardRec, ParameterStore)> {
    let cfg = resolve_config(run)?;
    let split = load_split(&cfg)?;
    let mut store = ParameterStore::new();
    let model = ClardRec::build(&mut store, ModelSpec::new(&split.catalog, &cfg), cfg.mode(), cfg.seed)?;
    let path = checkpoint.map_or_else(|| run.join(BEST_CHECKPOINT), Path::to_path_buf);
    load_store(&mut store, &path)?;
    Ok((cfg, split, model, store))
}

pub(super) fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let (cfg, split, model, store) = load_run(&a.out, a.checkpoint.as_deref())?;
    let negs = EvalNegatives::load_or_sample(&negatives_path(&cfg, &a.out), &split, EVAL_SEED)?;
    let val = evaluate(&model, &store, &split, &negs, Partition::Val, cfg.eval_batch)?;
    let test = evaluate(&model, &store, &split, &negs, Partition::Test, cfg.eval_batch)?;
    write_json(&a.out.join("eval.json"), &serde_json::json!({"label": cfg.label(), "val": val, "test": test}))?;
    print!("{}", render_table(&[("val".into(), val), ("test".into(), test)]));
    Ok(())
}

pub(super) fn ablate_cmd(a: &RunArgs) -> Result<()> {
    let base = load_config(&a.config, &a.overrides(false))?;
    base.validate()?;
    let drops: Vec<Ablation> = match &a.drop {
        Some(d) => parse_ablations(d)?.into_iter().collect(),
        None => Ablation::ALL.to_vec(),
    };
    let mut configs = vec![base.clone()];
    for d in drops {
        let mut c = base.clone();
        c.ablations.insert(d);
        configs.push(c);
    }
    let (split, negs, neg_path) = prepare(&base, &a.out)?;
    let one = |c: &ExperimentConfig| train_run(c, &split, &negs, &neg_path, &a.config, &a.out.join(c.label()), true);
    let threads = thread_cap();
    let results: Vec<RunMetrics> = if threads <= 1 {
        configs.iter().map(one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| configs.par_iter().map(one).collect::<Result<_>>())?
    };
    let rows: Vec<(String, MetricTable)> = results.iter().map(|m| (m.label.clone(), m.test)).collect();
    let table = render_table(&rows);
    let mut csv = String::from("label,hr1,hr5,ndcg5,mrr\n");
    for (l, t) in &rows {
        csv.push_str(&format!("{l},{:.6},{:.6},{:.6},{:.6}\n", t.hr1, t.hr5, t.ndcg5, t.mrr));
    }
    write_text(&a.out.join("ablation.txt"), &table)?;
    write_text(&a.out.join("ablation.csv"), &csv)?;
    print!("{table}");
    Ok(())
}

pub(super) fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let base = load_config(&a.run.config, &a.run.overrides(true))?;
    base.validate()?;
    let points = grid(&base, &a.lambda, &a.alpha, &a.beta);
    let (split, negs, neg_path) = prepare(&base, &a.run.out)?;
    freeze(&base, &a.run.out)?;
    write_json(
        &a.run.out.join(MANIFEST_FILE),
        &manifest("sweep", &base, &split, &a.run.config, Some(&neg_path), &a.run.out),
    )?;
    let rows = sweep(&base, &split, &negs, &points, Some(&a.run.out))?;
    let csv = sweep_csv(&rows);
    write_text(&a.run.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub(super) fn export_cmd(a: &ExportArgs) -> Result<()> {
    let (_, split, model, store) = load_run(&a.out, None)?;
    let dir = a.out.join("repr");
    mkdir(&dir)?;
    let path = dir.join("repr.json");
    let ids = export_representations(&model, &store, &split, a.items, a.users, a.seed, &path)?;
    println!("{}: {} items, {} users", path.display(), ids.items.len(), ids.users.len());
    Ok(())
}
