//! Flat `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbones::EncoderConfig;
use crate::datahub::{Filters, Scenario};
use crate::error::{Error, Result};
use crate::objectives::{Convention, DaWeighting, LossWeights};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Clardrec,
    /// The recommendation backbone alone.
    Backbone,
    /// Backbone trained on recommendation plus search clicks.
    Aug,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Clardrec => "clardrec",
            Variant::Backbone => "backbone",
            Variant::Aug => "aug",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clardrec" => Ok(Variant::Clardrec),
            "backbone" | "backbone-only" => Ok(Variant::Backbone),
            "aug" | "+aug" => Ok(Variant::Aug),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected clardrec, backbone or aug)"
            ))),
        }
    }
}

/// Components that an ablation removes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// No counterfactual disentangling: `i_src` stands in for `i_src/q`.
    CD,
    /// No gated fusion: recommendation scores use `i_rec` directly.
    FA,
    /// No data augmentation loss.
    DA,
    /// Augmentation rows weighted uniformly instead of by confidence.
    CS,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::CD, Ablation::FA, Ablation::DA, Ablation::CS];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::CD => "CD",
            Ablation::FA => "FA",
            Ablation::DA => "DA",
            Ablation::CS => "CS",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches('-').to_ascii_uppercase().as_str() {
            "CD" => Ok(Ablation::CD),
            "FA" => Ok(Ablation::FA),
            "DA" => Ok(Ablation::DA),
            "CS" => Ok(Ablation::CS),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected CD, FA, DA or CS)"
            ))),
        }
    }
}

pub fn parse_ablations(s: &str) -> Result<BTreeSet<Ablation>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty() && *t != "none")
        .map(Ablation::from_str)
        .collect()
}

/// Validation metric used for early stopping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValMetric {
    Hr1,
    Hr5,
    #[default]
    Ndcg5,
    Mrr,
}

impl FromStr for ValMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('@', "").as_str() {
            "hr1" => Ok(ValMetric::Hr1),
            "hr5" => Ok(ValMetric::Hr5),
            "ndcg5" => Ok(ValMetric::Ndcg5),
            "mrr" => Ok(ValMetric::Mrr),
            other => Err(Error::Config(format!("unknown validation metric `{other}`"))),
        }
    }
}

impl fmt::Display for ValMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValMetric::Hr1 => "hr@1",
            ValMetric::Hr5 => "hr@5",
            ValMetric::Ndcg5 => "ndcg@5",
            ValMetric::Mrr => "mrr",
        })
    }
}

/// Where the data comes from: a preprocessed split file or raw logs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSource {
    pub dataset: Option<PathBuf>,
    pub rec_log: Option<PathBuf>,
    pub src_log: Option<PathBuf>,
    pub user_attrs: Option<PathBuf>,
    pub item_attrs: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub encoder: EncoderConfig,
    pub variant: Variant,
    pub ablations: BTreeSet<Ablation>,
    pub convention: Convention,
    pub da_grad_through_omega: bool,
    pub weights: LossWeights,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub d_e: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub val_metric: ValMetric,
    pub filters: Filters,
    pub eval_batch: usize,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Cf,
            encoder: EncoderConfig::default(),
            variant: Variant::Clardrec,
            ablations: BTreeSet::new(),
            convention: Convention::AsWritten,
            da_grad_through_omega: false,
            weights: LossWeights::default(),
            lr: 0.005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1024,
            negatives: 4,
            d_e: 32,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            val_metric: ValMetric::Ndcg5,
            filters: Filters::default(),
            eval_batch: 512,
            data: DataSource::default(),
        }
    }
}

/// Every recognised key, in the order the frozen copy is written.
pub const KEYS: &[&str] = &[
    "scenario",
    "backbone",
    "variant",
    "ablations",
    "convention",
    "da_grad_through_omega",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "negatives",
    "lambda",
    "alpha",
    "beta",
    "gamma",
    "l_b",
    "l_e",
    "d_e",
    "d_h",
    "n_experts",
    "max_len",
    "patience",
    "max_epochs",
    "seed",
    "val_metric",
    "min_src_interactions",
    "max_history",
    "min_rec_interactions",
    "eval_batch",
    "dataset",
    "rec_log",
    "src_log",
    "user_attrs",
    "item_attrs",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{v}`"))),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Splits a config file into `(line number, key, value)` triples.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format {
                path: origin.display().to_string(),
                line: n + 1,
                detail: format!("expected `key = value`, found `{line}`"),
            });
        };
        out.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits `key=value` overrides.
pub fn split_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Usage(format!("override `{s}` is not key=value")))
}

pub fn unknown_key(key: &str, valid: &[&str]) -> Error {
    Error::Usage(format!("unknown key `{key}`; valid keys: {}", valid.join(", ")))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "scenario" => self.scenario = v.parse()?,
            "backbone" => self.encoder.backbone = v.parse()?,
            "variant" => self.variant = v.parse()?,
            "ablations" | "drop" => self.ablations = parse_ablations(v)?,
            "convention" => self.convention = v.parse()?,
            "da_grad_through_omega" => self.da_grad_through_omega = flag(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "adam_beta1" => self.adam_beta1 = num(key, v)?,
            "adam_beta2" => self.adam_beta2 = num(key, v)?,
            "adam_eps" => self.adam_eps = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "negatives" => self.negatives = num(key, v)?,
            "lambda" => self.weights.lambda = num(key, v)?,
            "alpha" => self.weights.alpha = num(key, v)?,
            "beta" => self.weights.beta = num(key, v)?,
            "gamma" => self.weights.gamma = num(key, v)?,
            "l_b" => self.encoder.l_b = num(key, v)?,
            "l_e" => self.encoder.l_e = num(key, v)?,
            "d_e" => self.d_e = num(key, v)?,
            "d_h" => self.encoder.d_h = num(key, v)?,
            "n_experts" => self.encoder.n_experts = num(key, v)?,
            "max_len" => self.encoder.max_len = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "max_epochs" => self.max_epochs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "val_metric" => self.val_metric = v.parse()?,
            "min_src_interactions" => self.filters.min_src_interactions = num(key, v)?,
            "max_history" => self.filters.max_history = num(key, v)?,
            "min_rec_interactions" => self.filters.min_rec_interactions = num(key, v)?,
            "eval_batch" => self.eval_batch = num(key, v)?,
            "dataset" => self.data.dataset = path(v),
            "rec_log" => self.data.rec_log = path(v),
            "src_log" => self.data.src_log = path(v),
            "user_attrs" => self.data.user_attrs = path(v),
            "item_attrs" => self.data.item_attrs = path(v),
            _ => return Err(unknown_key(key, KEYS)),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Ok(match key {
            "scenario" => self.scenario.to_string(),
            "backbone" => self.encoder.backbone.to_string(),
            "variant" => self.variant.to_string(),
            "ablations" => self.ablations.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","),
            "convention" => self.convention.to_string(),
            "da_grad_through_omega" => self.da_grad_through_omega.to_string(),
            "lr" => self.lr.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "negatives" => self.negatives.to_string(),
            "lambda" => self.weights.lambda.to_string(),
            "alpha" => self.weights.alpha.to_string(),
            "beta" => self.weights.beta.to_string(),
            "gamma" => self.weights.gamma.to_string(),
            "l_b" => self.encoder.l_b.to_string(),
            "l_e" => self.encoder.l_e.to_string(),
            "d_e" => self.d_e.to_string(),
            "d_h" => self.encoder.d_h.to_string(),
            "n_experts" => self.encoder.n_experts.to_string(),
            "max_len" => self.encoder.max_len.to_string(),
            "patience" => self.patience.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "seed" => self.seed.to_string(),
            "val_metric" => self.val_metric.to_string(),
            "min_src_interactions" => self.filters.min_src_interactions.to_string(),
            "max_history" => self.filters.max_history.to_string(),
            "min_rec_interactions" => self.filters.min_rec_interactions.to_string(),
            "eval_batch" => self.eval_batch.to_string(),
            "dataset" => p(&self.data.dataset),
            "rec_log" => p(&self.data.rec_log),
            "src_log" => p(&self.data.src_log),
            "user_attrs" => p(&self.data.user_attrs),
            "item_attrs" => p(&self.data.item_attrs),
            _ => return Err(unknown_key(key, KEYS)),
        })
    }

    /// Defaults overlaid with the pairs in `text`.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, origin)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (line, k, v) in parse_pairs(text, origin)? {
            self.set(&k, &v).map_err(|e| match e {
                Error::Config(detail) => Error::Format {
                    path: origin.display().to_string(),
                    line,
                    detail,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Reads a config file. A path of the form `preset:kuaisar/mlp` names a
    /// shipped preset instead.
    pub fn load(path: &Path) -> Result<Self> {
        if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("preset:")) {
            return Self::preset(name);
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = super::presets::preset_text(name)?;
        Self::parse(text, Path::new(&format!("preset:{name}")))
    }

    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = split_override(o.as_ref())?;
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// The frozen effective configuration, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.weights.validate()?;
        if self.scenario == Scenario::Sequential && !self.encoder.backbone.is_sequential() {
            return Err(Error::Config(format!(
                "backbone {} is a collaborative-filtering encoder; the sequential scenario needs gru or sas",
                self.encoder.backbone
            )));
        }
        if self.scenario == Scenario::Cf && self.encoder.backbone.is_sequential() {
            return Err(Error::Config(format!(
                "backbone {} needs the sequential scenario",
                self.encoder.backbone
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        let betas = [self.adam_beta1, self.adam_beta2];
        if !(self.adam_eps > 0.0) || betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config("adam_eps must be positive and adam betas in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.negatives == 0 || self.d_e == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch_size, negatives, d_e and eval_batch must be positive".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("max_epochs and patience must be positive".into()));
        }
        if self.variant != Variant::Clardrec && !self.ablations.is_empty() {
            return Err(Error::Config("ablations apply to the clardrec variant only".into()));
        }
        Ok(())
    }

    /// Weights after the variant and ablation rules: the baselines train
    /// without the search objectives, `-DA` drops the augmentation term and
    /// `-CD` drops both disentangling terms.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.variant != Variant::Clardrec {
            w.lambda = 0.0;
        }
        if self.ablations.contains(&Ablation::DA) {
            w.beta = 0.0;
        }
        if self.ablations.contains(&Ablation::CD) {
            w.alpha = 0.0;
            w.gamma = 0.0;
        }
        w
    }

    pub fn da_weighting(&self) -> DaWeighting {
        if self.ablations.contains(&Ablation::CS) {
            DaWeighting::Uniform
        } else if self.da_grad_through_omega {
            DaWeighting::Through
        } else {
            DaWeighting::Detached
        }
    }

    /// Which parts of the model a run exercises.
    pub fn mode(&self) -> ModelMode {
        let use_src = self.effective_weights().lambda > 0.0;
        ModelMode {
            use_src,
            fusion: use_src && !self.ablations.contains(&Ablation::FA),
            disentangle: !self.ablations.contains(&Ablation::CD),
        }
    }

    /// Short label such as `clardrec-CD` or `aug`.
    pub fn label(&self) -> String {
        let mut s = self.variant.to_string();
        for a in &self.ablations {
            let _ = write!(s, "-{a}");
        }
        s
    }
}

/// Switches derived from the variant and ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMode {
    /// Search-domain objectives are trained.
    pub use_src: bool,
    /// Recommendation scores use the fused item representation.
    pub fusion: bool,
    /// `i_src/q` comes from the gated view rather than `i_src`.
    pub disentangle: bool,
}
