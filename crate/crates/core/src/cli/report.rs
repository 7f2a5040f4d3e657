use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::runs::{RunMetrics, MANIFEST_FILE, METRICS_FILE};
use crate::error::{Error, Result};
use crate::evalkit::{median_table, render_table, MetricTable};

/// Runs found under a set of directories.
#[derive(Clone, Debug, Default)]
pub struct CollectedRuns {
    pub complete: Vec<(PathBuf, RunMetrics)>,
    /// Directories with a manifest but no metrics.
    pub incomplete: Vec<PathBuf>,
    /// `sweep.csv` files.
    pub sweeps: Vec<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct ReportOutput {
    pub text: String,
    pub csv: String,
    pub runs: usize,
    pub incomplete: Vec<PathBuf>,
}

fn walk(dir: &Path, found: &mut CollectedRuns) -> Result<()> {
    let metrics = dir.join(METRICS_FILE);
    if metrics.is_file() {
        let bytes = fs::read(&metrics).map_err(|e| Error::io(&metrics, e))?;
        let m: RunMetrics = serde_json::from_slice(&bytes)?;
        found.complete.push((dir.to_path_buf(), m));
    } else if dir.join(MANIFEST_FILE).is_file() && !dir.join("sweep.csv").is_file() {
        let manifest = fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap_or_default();
        if manifest.contains("\"command\": \"train\"") {
            found.incomplete.push(dir.to_path_buf());
        }
    }
    if dir.join("sweep.csv").is_file() {
        found.sweeps.push(dir.join("sweep.csv"));
    }
    let mut children: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        walk(&c, found)?;
    }
    Ok(())
}

pub fn collect_runs(dirs: &[PathBuf]) -> Result<CollectedRuns> {
    let mut found = CollectedRuns::default();
    for d in dirs {
        if !d.is_dir() {
            return Err(Error::Usage(format!("{} is not a directory", d.display())));
        }
        walk(d, &mut found)?;
    }
    Ok(found)
}

type GroupKey = (String, String, String);

fn csv_row(key: &GroupKey, seed: &str, t: &MetricTable) -> String {
    format!(
        "{},{},{},{seed},{:.6},{:.6},{:.6},{:.6}\n",
        key.0, key.1, key.2, t.hr1, t.hr5, t.ndcg5, t.mrr
    )
}

/// Writes `report.txt`, `report.csv` and, when sweeps are present,
/// `sweep_curves.csv` into `out`. Runs are grouped by scenario, backbone
/// and variant label, with one row per seed and a median row.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<ReportOutput> {
    let found = collect_runs(dirs)?;
    let mut prints: BTreeMap<&str, (&str, &Path)> = BTreeMap::new();
    for (dir, m) in &found.complete {
        let (fp, first) = *prints.entry(&m.scenario).or_insert((&m.dataset_fingerprint, dir));
        if fp != m.dataset_fingerprint {
            return Err(Error::Contract(format!(
                "runs {} and {} used different {} datasets; refusing to merge",
                first.display(),
                dir.display(),
                m.scenario
            )));
        }
    }
    let mut groups: BTreeMap<GroupKey, Vec<&RunMetrics>> = BTreeMap::new();
    for (_, m) in &found.complete {
        groups
            .entry((m.scenario.clone(), m.backbone.clone(), m.label.clone()))
            .or_default()
            .push(m);
    }
    let mut text = String::new();
    let mut csv = String::from("scenario,backbone,variant,seed,hr1,hr5,ndcg5,mrr\n");
    if groups.is_empty() {
        log::warn!("no finished runs under the given directories");
        text.push_str("no finished runs\n");
    }
    for (key, runs) in &mut groups {
        runs.sort_by_key(|m| m.seed);
        let mut rows: Vec<(String, MetricTable)> = runs.iter().map(|m| (format!("seed {}", m.seed), m.test)).collect();
        let tables: Vec<MetricTable> = runs.iter().map(|m| m.test).collect();
        let med = median_table(&tables).expect("non-empty group");
        rows.push(("median".into(), med));
        text.push_str(&format!("{} / {} / {}\n", key.0, key.1, key.2));
        text.push_str(&render_table(&rows));
        text.push('\n');
        for m in runs.iter() {
            csv.push_str(&csv_row(key, &m.seed.to_string(), &m.test));
        }
        csv.push_str(&csv_row(key, "median", &med));
    }
    if !found.incomplete.is_empty() {
        text.push_str("incomplete:\n");
        for d in &found.incomplete {
            text.push_str(&format!("  {}\n", d.display()));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, body: &str| {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("report.txt", &text)?;
    write("report.csv", &csv)?;
    if !found.sweeps.is_empty() {
        let mut curves = String::new();
        for path in &found.sweeps {
            let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let run = path.parent().map(|p| p.display().to_string()).unwrap_or_default();
            for (k, line) in body.lines().enumerate() {
                if k == 0 {
                    if curves.is_empty() {
                        curves.push_str(&format!("run,{line}\n"));
                    }
                } else {
                    curves.push_str(&format!("{run},{line}\n"));
                }
            }
        }
        write("sweep_curves.csv", &curves)?;
    }
    Ok(ReportOutput {
        text,
        csv,
        runs: found.complete.len(),
        incomplete: found.incomplete,
    })
}
