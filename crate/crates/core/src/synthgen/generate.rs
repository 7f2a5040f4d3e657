//! Two-domain click logs with planted general and query factors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datahub::{ingest_sources, IngestOptions, Ingested};
use crate::error::{Error, Result};
use crate::numcore::checkpoint::{read_arrays, write_arrays};
use crate::numcore::{DenseArray, RandomStream};

/// First timestamp written to generated logs.
const EPOCH_START: i64 = 1_600_000_000;
/// Quantile cut points of a standard normal into four buckets.
const QUARTILES: [f32; 3] = [-0.6745, 0.0, 0.6745];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Size of the query pool; every user issues `n_queries / n_users`
    /// searches (at least one) drawn from it.
    pub n_queries: usize,
    pub d_g: usize,
    pub d_q: usize,
    /// Standard deviation of the per-impression logit noise.
    pub noise: f32,
    pub click_bias: f32,
    /// Coefficient of `T·Q` in the search click logit.
    pub query_weight: f32,
    /// Coefficient of `P·G` in the search click logit.
    pub general_weight: f32,
    /// Random recommendation impressions per user, and per search session.
    pub impressions: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_items: 5000,
            n_queries: 20_000,
            d_g: 16,
            d_q: 16,
            noise: 0.5,
            click_bias: -6.0,
            query_weight: 1.0,
            general_weight: 0.5,
            impressions: 50,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 2 || self.n_items < 2 || self.n_queries < 2 || self.impressions < 1 {
            return Err(Error::Config("synthetic counts must be at least 2".into()));
        }
        if self.d_g == 0 || self.d_q == 0 {
            return Err(Error::Config("latent dimensions must be positive".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn searches_per_user(&self) -> usize {
        (self.n_queries / self.n_users).max(1)
    }
}

/// Planted factors, indexed by the numeric part of the raw ids
/// (`u{k}`, `i{k}`, query pool index).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub general: DenseArray,
    pub query: DenseArray,
    pub interest: DenseArray,
    pub target: DenseArray,
}

impl SynthTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_arrays(
            path,
            [
                ("G", &self.general),
                ("Q", &self.query),
                ("P", &self.interest),
                ("T", &self.target),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut arrays = read_arrays(path)?;
        let mut take = |name: &str| -> Result<DenseArray> {
            let k = arrays
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("truth file lacks `{name}`")))?;
            Ok(arrays.swap_remove(k).1)
        };
        Ok(Self {
            general: take("G")?,
            query: take("Q")?,
            interest: take("P")?,
            target: take("T")?,
        })
    }
}

/// Generated logs in the ingestion TSV formats plus the planted truth.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub rec_tsv: String,
    pub src_tsv: String,
    pub user_attrs_tsv: String,
    pub item_attrs_tsv: String,
    pub truth: SynthTruth,
    pub rec_clicks: usize,
    pub src_clicks: usize,
}

fn normals(n: usize, stream: &mut RandomStream) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(stream)).collect()
}

fn bucket(x: f32) -> usize {
    QUARTILES.iter().filter(|c| x > **c).count()
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    crate::numcore::gemm::dot64(a, b) as f32
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Query text: one token per target dimension naming its quartile bucket.
fn query_text(t: &[f32]) -> String {
    t.iter()
        .enumerate()
        .map(|(k, v)| format!("d{k}b{}", bucket(*v)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let root = RandomStream::new("synth", cfg.seed);
    let mut factors = root.derive("factors");
    let general = DenseArray::matrix(cfg.n_items, cfg.d_g, normals(cfg.n_items * cfg.d_g, &mut factors))?;
    let query = DenseArray::matrix(cfg.n_items, cfg.d_q, normals(cfg.n_items * cfg.d_q, &mut factors))?;
    let interest = DenseArray::matrix(cfg.n_users, cfg.d_g, normals(cfg.n_users * cfg.d_g, &mut factors))?;
    let target =
        DenseArray::matrix(cfg.n_queries, cfg.d_q, normals(cfg.n_queries * cfg.d_q, &mut factors))?;

    let texts: Vec<String> = (0..cfg.n_queries).map(|q| query_text(target.row(q))).collect();
    let mut rec_tsv = String::new();
    let mut src_tsv = String::new();
    let (mut rec_clicks, mut src_clicks) = (0, 0);
    let searches = cfg.searches_per_user();
    for u in 0..cfg.n_users {
        let mut s = root.derive(&format!("user/{u}"));
        let p = interest.row(u);
        // Search sessions are interleaved with the recommendation stream at
        // random impression offsets.
        let mut slots: Vec<usize> = (0..searches)
            .map(|_| s.below(cfg.impressions as u64 + 1) as usize)
            .collect();
        slots.sort_unstable();
        let mut clock = EPOCH_START;
        let mut next_slot = 0;
        for k in 0..=cfg.impressions {
            while next_slot < slots.len() && slots[next_slot] == k {
                let q = s.below(cfg.n_queries as u64) as usize;
                let t = target.row(q);
                for _ in 0..cfg.impressions {
                    let i = s.below(cfg.n_items as u64) as usize;
                    let eps: f32 = StandardNormal.sample(&mut s);
                    let logit = cfg.query_weight * dot(t, query.row(i))
                        + cfg.general_weight * dot(p, general.row(i))
                        + cfg.click_bias
                        + cfg.noise * eps;
                    clock += 1;
                    if s.unit_f32() < sigmoid(logit) {
                        let _ = writeln!(src_tsv, "u{u}\ti{i}\t{clock}\t{}", texts[q]);
                        src_clicks += 1;
                    }
                }
                next_slot += 1;
            }
            if k == cfg.impressions {
                break;
            }
            let i = s.below(cfg.n_items as u64) as usize;
            let eps: f32 = StandardNormal.sample(&mut s);
            let logit = dot(p, general.row(i)) + cfg.click_bias + cfg.noise * eps;
            clock += 1;
            if s.unit_f32() < sigmoid(logit) {
                let _ = writeln!(rec_tsv, "u{u}\ti{i}\t{clock}\t");
                rec_clicks += 1;
            }
        }
    }
    if rec_clicks == 0 || src_clicks == 0 {
        return Err(Error::Generation(format!(
            "{rec_clicks} recommendation and {src_clicks} search clicks generated; raise click_bias (now {})",
            cfg.click_bias
        )));
    }
    let mut user_attrs_tsv = String::new();
    for u in 0..cfg.n_users {
        let p = interest.row(u);
        let second = p.get(1).copied().unwrap_or(0.0);
        let _ = writeln!(user_attrs_tsv, "u{u}\tp0b{}\tp1b{}", bucket(p[0]), bucket(second));
    }
    let mut item_attrs_tsv = String::new();
    for i in 0..cfg.n_items {
        let _ = writeln!(
            item_attrs_tsv,
            "i{i}\tg0b{}\tq0b{}",
            bucket(general.row(i)[0]),
            bucket(query.row(i)[0])
        );
    }
    Ok(SynthData {
        rec_tsv,
        src_tsv,
        user_attrs_tsv,
        item_attrs_tsv,
        truth: SynthTruth {
            general,
            query,
            interest,
            target,
        },
        rec_clicks,
        src_clicks,
    })
}

impl SynthData {
    /// Writes `rec.tsv`, `src.tsv`, `user_attrs.tsv`, `item_attrs.tsv` and
    /// `truth.json` + `truth.bin` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("rec.tsv", &self.rec_tsv),
            ("src.tsv", &self.src_tsv),
            ("user_attrs.tsv", &self.user_attrs_tsv),
            ("item_attrs.tsv", &self.item_attrs_tsv),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        self.truth.save(&dir.join("truth.json"))
    }

    /// Ingests the generated text directly.
    pub fn ingest(&self) -> Result<Ingested> {
        ingest_sources(
            (Path::new("rec.tsv"), &self.rec_tsv),
            (Path::new("src.tsv"), &self.src_tsv),
            Some((Path::new("user_attrs.tsv"), &self.user_attrs_tsv)),
            Some((Path::new("item_attrs.tsv"), &self.item_attrs_tsv)),
            IngestOptions::default(),
        )
    }
}

/// Numeric index encoded in a generated raw id such as `i42`.
pub fn raw_index(raw: &str) -> Option<usize> {
    raw.get(1..)?.parse().ok()
}
