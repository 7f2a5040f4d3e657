//! Linear probe of item representations against planted factors.

use serde::{Deserialize, Serialize};

use super::generate::SynthTruth;
use crate::datahub::shuffle_in_place;
use crate::error::{Error, Result};
use crate::numcore::{DenseArray, RandomStream};

pub const RIDGE: f64 = 1e-3;
pub const MIN_PROBE_ITEMS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub r2_general: f64,
    pub r2_query: f64,
    pub items: usize,
}

impl ProbeResult {
    pub fn gap(&self) -> f64 {
        self.r2_general - self.r2_query
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix
/// stored row-major.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Probe("normal equations are not positive definite".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[&[f32]], d: usize) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(*r) {
                *m += *x as f64 / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(*r).zip(&mean) {
                *v += (*x as f64 - m).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, r: &[f32]) -> Vec<f64> {
        r.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (*x as f64 - m) / s)
            .collect()
    }
}

/// Fits a ridge map on `train` and returns held-out R² pooled over all
/// target dimensions: `1 - ΣSSE / ΣSST`.
fn ridge_r2(x_train: &[Vec<f64>], y_train: &[&[f32]], x_test: &[Vec<f64>], y_test: &[&[f32]]) -> Result<f64> {
    let d = x_train[0].len();
    let t = y_train[0].len();
    let n = x_train.len() as f64;
    let mut y_mean = vec![0.0; t];
    for y in y_train {
        for (m, v) in y_mean.iter_mut().zip(*y) {
            *m += *v as f64 / n;
        }
    }
    let mut gram = vec![0.0; d * d];
    let mut xty = vec![0.0; d * t];
    for (x, y) in x_train.iter().zip(y_train) {
        for i in 0..d {
            for j in 0..=i {
                gram[i * d + j] += x[i] * x[j];
            }
            for k in 0..t {
                xty[i * t + k] += x[i] * (y[k] as f64 - y_mean[k]);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[j * d + i] = gram[i * d + j];
        }
        gram[i * d + i] += RIDGE;
    }
    let l = cholesky(&gram, d)?;
    let mut w = vec![0.0; d * t];
    let mut col = vec![0.0; d];
    for k in 0..t {
        for i in 0..d {
            col[i] = xty[i * t + k];
        }
        cholesky_solve(&l, d, &mut col);
        for i in 0..d {
            w[i * t + k] = col[i];
        }
    }
    let m = y_test.len() as f64;
    let mut test_mean = vec![0.0; t];
    for y in y_test {
        for (a, v) in test_mean.iter_mut().zip(*y) {
            *a += *v as f64 / m;
        }
    }
    let (mut sse, mut sst) = (0.0, 0.0);
    for (x, y) in x_test.iter().zip(y_test) {
        for k in 0..t {
            let pred = y_mean[k] + (0..d).map(|i| x[i] * w[i * t + k]).sum::<f64>();
            sse += (y[k] as f64 - pred).powi(2);
            sst += (y[k] as f64 - test_mean[k]).powi(2);
        }
    }
    if sst <= 0.0 {
        return Err(Error::Probe("held-out targets have zero variance".into()));
    }
    Ok(1.0 - sse / sst)
}

fn targets<'a>(m: &'a DenseArray, set: &[&(usize, Vec<f32>)]) -> Vec<&'a [f32]> {
    set.iter().map(|(i, _)| m.row(*i)).collect()
}

/// Held-out R² of ridge maps from item representations to the planted
/// general and query factors. `reprs` pairs a truth item index with its
/// vector; items outside the truth table are ignored. The 80/20 split is
/// a fixed shuffle so repeated probes are comparable.
pub fn probe_disentanglement(reprs: &[(usize, Vec<f32>)], truth: &SynthTruth) -> Result<ProbeResult> {
    let n_truth = truth.general.rows();
    let mut rows: Vec<&(usize, Vec<f32>)> = reprs.iter().filter(|(i, _)| *i < n_truth).collect();
    if rows.len() < MIN_PROBE_ITEMS {
        return Err(Error::Probe(format!(
            "{} items overlap the truth table; at least {MIN_PROBE_ITEMS} are needed",
            rows.len()
        )));
    }
    let d = rows[0].1.len();
    if d == 0 || rows.iter().any(|(_, v)| v.len() != d) {
        return Err(Error::Probe("representations must share one positive width".into()));
    }
    if rows.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Probe("non-finite representation".into()));
    }
    rows.sort_by_key(|(i, _)| *i);
    let mut order: Vec<u32> = (0..rows.len() as u32).collect();
    shuffle_in_place(&mut order, &mut RandomStream::new("probe/split", 0));
    let cut = rows.len() * 4 / 5;
    let (tr, te) = order.split_at(cut);
    let pick = |ks: &[u32]| -> Vec<&(usize, Vec<f32>)> { ks.iter().map(|k| rows[*k as usize]).collect() };
    let (train, test) = (pick(tr), pick(te));

    let train_x: Vec<&[f32]> = train.iter().map(|(_, v)| v.as_slice()).collect();
    let st = Standardizer::fit(&train_x, d);
    let x_train: Vec<Vec<f64>> = train_x.iter().map(|r| st.apply(r)).collect();
    let x_test: Vec<Vec<f64>> = test.iter().map(|(_, v)| st.apply(v)).collect();
    let r2_general = ridge_r2(
        &x_train,
        &targets(&truth.general, &train),
        &x_test,
        &targets(&truth.general, &test),
    )?;
    let r2_query = ridge_r2(
        &x_train,
        &targets(&truth.query, &train),
        &x_test,
        &targets(&truth.query, &test),
    )?;
    Ok(ProbeResult {
        r2_general,
        r2_query,
        items: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate::{generate, SynthConfig};

    fn truth() -> SynthTruth {
        generate(&SynthConfig {
            n_users: 20,
            n_items: 1000,
            n_queries: 40,
            d_g: 6,
            d_q: 6,
            click_bias: 0.0,
            ..SynthConfig::default()
        })
        .unwrap()
        .truth
    }

    fn rows(m: &DenseArray) -> Vec<(usize, Vec<f32>)> {
        (0..m.rows()).map(|i| (i, m.row(i).to_vec())).collect()
    }

    #[test]
    fn general_factors_recover_only_general() {
        let t = truth();
        let r = probe_disentanglement(&rows(&t.general), &t).unwrap();
        assert!((r.r2_general - 1.0).abs() < 1e-4, "{r:?}");
        assert!(r.r2_query.abs() < 0.05, "{r:?}");
    }

    #[test]
    fn concatenation_recovers_both() {
        let t = truth();
        let both: Vec<(usize, Vec<f32>)> = (0..t.general.rows())
            .map(|i| (i, [t.general.row(i), t.query.row(i)].concat()))
            .collect();
        let r = probe_disentanglement(&both, &t).unwrap();
        assert!(r.r2_general > 0.999 && r.r2_query > 0.999, "{r:?}");
    }

    #[test]
    fn noise_recovers_nothing() {
        let t = truth();
        let mut s = RandomStream::new("noise", 3);
        let noise: Vec<(usize, Vec<f32>)> =
            (0..t.general.rows()).map(|i| (i, (0..8).map(|_| s.uniform(-1.0, 1.0)).collect())).collect();
        let r = probe_disentanglement(&noise, &t).unwrap();
        assert!(r.r2_general.abs() < 0.05 && r.r2_query.abs() < 0.05, "{r:?}");
    }

    #[test]
    fn probe_is_scale_invariant() {
        let t = truth();
        let base = rows(&t.general);
        let scaled: Vec<(usize, Vec<f32>)> =
            base.iter().map(|(i, v)| (*i, v.iter().map(|x| -3.5 * x).collect())).collect();
        let a = probe_disentanglement(&base, &t).unwrap();
        let b = probe_disentanglement(&scaled, &t).unwrap();
        assert!((a.r2_general - b.r2_general).abs() < 1e-6);
        assert!((a.r2_query - b.r2_query).abs() < 1e-6);
    }

    #[test]
    fn too_few_items_is_a_probe_error() {
        let t = truth();
        let few: Vec<(usize, Vec<f32>)> = rows(&t.general).into_iter().take(99).collect();
        assert!(matches!(probe_disentanglement(&few, &t), Err(Error::Probe(_))));
    }
}
