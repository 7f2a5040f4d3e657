//! TSV log and attribute ingestion.
//!
//! Interaction rows are `user \t item \t timestamp \t query`; the query
//! column may be absent or empty in recommendation logs. Attribute rows are
//! `id \t attr1 \t attr2 ...`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::{Catalog, Domain, InteractionRecord, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IngestOptions {
    /// Fail on the first malformed row instead of skipping and counting it.
    pub strict: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { strict: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rec_rows: usize,
    pub src_rows: usize,
    pub malformed_rows: usize,
    /// Search rows whose query string was empty (kept, pooled to zero).
    pub empty_queries: usize,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub catalog: Catalog,
    pub records: Vec<InteractionRecord>,
    pub report: IngestReport,
}

fn is_unknown(v: &str) -> bool {
    v.is_empty() || v == "\\N" || v.eq_ignore_ascii_case("null") || v.eq_ignore_ascii_case("unknown")
}

struct Builder {
    catalog: Catalog,
    records: Vec<InteractionRecord>,
    report: IngestReport,
    opts: IngestOptions,
}

impl Builder {
    fn new(opts: IngestOptions) -> Self {
        Self {
            catalog: Catalog {
                users: Vocab::new(),
                items: Vocab::new(),
                words: Vocab::new(),
                queries: vec![Vec::new()],
                query_text: Vocab::new(),
                user_attrs: Vec::new(),
                item_attrs: Vec::new(),
                user_attr_vocabs: Vec::new(),
                item_attr_vocabs: Vec::new(),
            },
            records: Vec::new(),
            report: IngestReport::default(),
            opts,
        }
    }

    fn malformed(&mut self, path: &Path, line: usize, detail: String) -> Result<()> {
        if self.opts.strict {
            return Err(Error::Format {
                path: path.display().to_string(),
                line,
                detail,
            });
        }
        log::warn!("{}:{line}: skipped: {detail}", path.display());
        self.report.malformed_rows += 1;
        Ok(())
    }

    fn intern_query(&mut self, raw: &str) -> u32 {
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            return 0;
        }
        let key = tokens.join(" ");
        let q = self.catalog.query_text.intern(&key);
        if q as usize == self.catalog.queries.len() {
            let ids = tokens.iter().map(|t| self.catalog.words.intern(t)).collect();
            self.catalog.queries.push(ids);
        }
        q
    }

    fn interactions(&mut self, path: &Path, text: &str, domain: Domain) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let needed = if domain == Domain::Src { 4 } else { 3 };
            if cols.len() < needed {
                self.malformed(
                    path,
                    line_no,
                    format!("expected {needed} tab-separated columns, found {}", cols.len()),
                )?;
                continue;
            }
            let (user, item) = (cols[0].trim(), cols[1].trim());
            if user.is_empty() || item.is_empty() {
                self.malformed(path, line_no, "empty user or item id".into())?;
                continue;
            }
            let Ok(timestamp) = cols[2].trim().parse::<i64>() else {
                self.malformed(path, line_no, format!("unparseable timestamp `{}`", cols[2]))?;
                continue;
            };
            let query = match domain {
                Domain::Rec => 0,
                Domain::Src => {
                    let q = self.intern_query(cols[3]);
                    if q == 0 {
                        self.report.empty_queries += 1;
                        log::warn!("{}:{line_no}: empty search query kept", path.display());
                    }
                    q
                }
            };
            let user = self.catalog.users.intern(user);
            let item = self.catalog.items.intern(item);
            self.records.push(InteractionRecord {
                user,
                item,
                timestamp,
                domain,
                query,
            });
            match domain {
                Domain::Rec => self.report.rec_rows += 1,
                Domain::Src => self.report.src_rows += 1,
            }
        }
        Ok(())
    }

    /// Parses an attribute file into `(entity index, per-column values)`.
    fn attributes(
        &mut self,
        path: &Path,
        text: &str,
        for_users: bool,
    ) -> Result<(Vec<(u32, Vec<u32>)>, Vec<Vocab>)> {
        let mut arity: Option<usize> = None;
        let mut vocabs: Vec<Vocab> = Vec::new();
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let width = cols.len() - 1;
            let expected = *arity.get_or_insert(width);
            if width == 0 || width != expected || cols[0].trim().is_empty() {
                self.malformed(
                    path,
                    line_no,
                    format!("expected an id and {expected} attribute columns, found {} columns", cols.len()),
                )?;
                continue;
            }
            if vocabs.is_empty() {
                vocabs = (0..width).map(|_| Vocab::new()).collect();
            }
            let values = cols[1..]
                .iter()
                .zip(vocabs.iter_mut())
                .map(|(v, voc)| {
                    let v = v.trim();
                    if is_unknown(v) {
                        0
                    } else {
                        voc.intern(v)
                    }
                })
                .collect();
            let id = if for_users {
                self.catalog.users.intern(cols[0].trim())
            } else {
                self.catalog.items.intern(cols[0].trim())
            };
            rows.push((id, values));
        }
        Ok((rows, vocabs))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn fill_attrs(n: usize, rows: Vec<(u32, Vec<u32>)>, arity: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0; arity]; n];
    for (id, values) in rows {
        out[id as usize] = values;
    }
    out
}

/// Reads the two click logs and the two attribute files. Attribute files
/// are optional; a missing one yields zero attribute columns.
pub fn ingest(
    rec_log: &Path,
    src_log: &Path,
    user_attrs: Option<&Path>,
    item_attrs: Option<&Path>,
    opts: IngestOptions,
) -> Result<Ingested> {
    let ua = user_attrs.map(|p| read(p).map(|t| (p, t))).transpose()?;
    let ia = item_attrs.map(|p| read(p).map(|t| (p, t))).transpose()?;
    ingest_sources(
        (rec_log, &read(rec_log)?),
        (src_log, &read(src_log)?),
        ua.as_ref().map(|(p, t)| (*p, t.as_str())),
        ia.as_ref().map(|(p, t)| (*p, t.as_str())),
        opts,
    )
}

/// As [`ingest`], over already-loaded text; each source is labelled with
/// the path used in error messages.
pub fn ingest_sources(
    rec_log: (&Path, &str),
    src_log: (&Path, &str),
    user_attrs: Option<(&Path, &str)>,
    item_attrs: Option<(&Path, &str)>,
    opts: IngestOptions,
) -> Result<Ingested> {
    let mut b = Builder::new(opts);
    b.interactions(rec_log.0, rec_log.1, Domain::Rec)?;
    b.interactions(src_log.0, src_log.1, Domain::Src)?;
    let (urows, uvocab) = match user_attrs {
        Some((p, t)) => b.attributes(p, t, true)?,
        None => (Vec::new(), Vec::new()),
    };
    let (irows, ivocab) = match item_attrs {
        Some((p, t)) => b.attributes(p, t, false)?,
        None => (Vec::new(), Vec::new()),
    };
    let mut catalog = b.catalog;
    catalog.user_attrs = fill_attrs(catalog.n_users(), urows, uvocab.len());
    catalog.item_attrs = fill_attrs(catalog.n_items(), irows, ivocab.len());
    catalog.user_attr_vocabs = uvocab;
    catalog.item_attr_vocabs = ivocab;
    if b.records.is_empty() {
        return Err(Error::Format {
            path: rec_log.0.display().to_string(),
            line: 0,
            detail: "no interaction rows".into(),
        });
    }
    Ok(Ingested {
        catalog,
        records: b.records,
        report: b.report,
    })
}
