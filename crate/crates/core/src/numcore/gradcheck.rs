//! Central finite-difference checks of the tape's reverse-mode gradients.

use super::array::DenseArray;
use super::graph::{Graph, Primitive};
use super::rng::RandomStream;
use super::store::{Gradients, ParameterStore};
use crate::error::{Error, Result};

pub const STEP: f32 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-5;

/// Analytic `a` agrees with numeric `n` when the gap is within the absolute
/// floor plus the relative tolerance of the larger magnitude.
pub fn within(a: f64, n: f64) -> bool {
    (a - n).abs() <= ABS_FLOOR + REL_TOL * a.abs().max(n.abs())
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    /// Largest `|a - n| / max(|a|, |n|)` over entries whose magnitude
    /// reaches the absolute floor; smaller entries are judged by the floor.
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheck {
    pub fn record(&mut self, label: impl FnOnce() -> String, a: f64, n: f64) {
        self.checked += 1;
        let scale = a.abs().max(n.abs());
        let rel = if scale >= ABS_FLOOR { (a - n).abs() / scale } else { 0.0 };
        if !within(a, n) {
            self.failures += 1;
        }
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = format!("{} analytic={a:.6e} numeric={n:.6e}", label());
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.failures += other.failures;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

struct Input<'a> {
    shape: &'a [usize],
    data: Vec<f64>,
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            for j in 0..n {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

/// Straightforward `f64` forward evaluation of a primitive, independent of
/// the tape's kernels. Used as the numeric side of every check.
fn reference(kind: &Primitive, x: &[Input<'_>]) -> Vec<f64> {
    let cols = |i: usize| *x[i].shape.last().unwrap_or(&1);
    match kind {
        Primitive::MatMul => {
            let (m, k, n) = (x[0].shape[0], x[0].shape[1], x[1].shape[1]);
            mm(&x[0].data, &x[1].data, m, k, n)
        }
        Primitive::Add => {
            let n = x[1].data.len();
            x[0].data.iter().enumerate().map(|(i, v)| v + x[1].data[i % n]).collect()
        }
        Primitive::Hadamard => x[0].data.iter().zip(&x[1].data).map(|(a, b)| a * b).collect(),
        Primitive::Concat => {
            let rows = x[0].data.len() / cols(0);
            let mut out = Vec::new();
            for r in 0..rows {
                for (i, part) in x.iter().enumerate() {
                    let c = cols(i);
                    out.extend_from_slice(&part.data[r * c..(r + 1) * c]);
                }
            }
            out
        }
        Primitive::Relu => x[0].data.iter().map(|v| v.max(0.0)).collect(),
        Primitive::Sigmoid => x[0].data.iter().map(|v| sig(*v)).collect(),
        Primitive::LogSigmoid => x[0].data.iter().map(|v| sig(*v).ln()).collect(),
        Primitive::Softmax => {
            let c = cols(0);
            let mut out = Vec::new();
            for row in x[0].data.chunks(c) {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                out.extend(row.iter().map(|v| v.exp() / z));
            }
            out
        }
        Primitive::MeanPool { segments } => {
            let c = cols(0);
            let mut out = vec![0.0; segments.len() * c];
            for (s, seg) in segments.iter().enumerate() {
                for &i in seg {
                    for j in 0..c {
                        out[s * c + j] += x[0].data[i as usize * c + j] / seg.len() as f64;
                    }
                }
            }
            out
        }
        Primitive::EmbeddingGather { indices } => {
            let c = cols(0);
            indices
                .iter()
                .flat_map(|&i| x[0].data[i as usize * c..(i as usize + 1) * c].to_vec())
                .collect()
        }
        Primitive::GruCell { mask } => {
            let (b, din, dh) = (x[0].shape[0], x[0].shape[1], x[1].shape[1]);
            let gi = mm(&x[0].data, &x[2].data, b, din, 3 * dh);
            let gh = mm(&x[1].data, &x[3].data, b, dh, 3 * dh);
            let (bi, bh) = (&x[4].data, &x[5].data);
            let mut out = vec![0.0; b * dh];
            for r in 0..b {
                let m = mask.as_ref().map_or(1.0, |m| f64::from(m[r]));
                for j in 0..dh {
                    let at = |v: &[f64], k: usize| v[r * 3 * dh + k];
                    let rr = sig(at(&gi, j) + bi[j] + at(&gh, j) + bh[j]);
                    let zz = sig(at(&gi, dh + j) + bi[dh + j] + at(&gh, dh + j) + bh[dh + j]);
                    let nn = (at(&gi, 2 * dh + j) + bi[2 * dh + j]
                        + rr * (at(&gh, 2 * dh + j) + bh[2 * dh + j]))
                        .tanh();
                    let hp = x[1].data[r * dh + j];
                    out[r * dh + j] = m * ((1.0 - zz) * nn + zz * hp) + (1.0 - m) * hp;
                }
            }
            out
        }
        Primitive::CausalSelfAttention { seq_len, valid } => {
            let (rows, din) = (x[0].shape[0], x[0].shape[1]);
            let d = x[1].shape[1];
            let q = mm(&x[0].data, &x[1].data, rows, din, d);
            let k = mm(&x[0].data, &x[2].data, rows, din, d);
            let v = mm(&x[0].data, &x[3].data, rows, din, d);
            let l = *seq_len;
            let mut out = vec![0.0; rows * d];
            for s in 0..rows / l {
                for i in 0..l {
                    let keys: Vec<usize> = (0..=i)
                        .filter(|j| valid.as_ref().is_none_or(|m| m[s * l + j]))
                        .collect();
                    let scores: Vec<f64> = keys
                        .iter()
                        .map(|&j| {
                            (0..d)
                                .map(|t| q[(s * l + i) * d + t] * k[(s * l + j) * d + t])
                                .sum::<f64>()
                                / (d as f64).sqrt()
                        })
                        .collect();
                    let z: f64 = scores.iter().map(|v| v.exp()).sum();
                    for (&j, sc) in keys.iter().zip(&scores) {
                        for t in 0..d {
                            out[(s * l + i) * d + t] += sc.exp() / z * v[(s * l + j) * d + t];
                        }
                    }
                }
            }
            out
        }
        Primitive::DotProduct => {
            let c = cols(0);
            x[0].data
                .chunks(c)
                .zip(x[1].data.chunks(c))
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum())
                .collect()
        }
        Primitive::LayerNorm => {
            let c = cols(0);
            let mut out = Vec::new();
            for row in x[0].data.chunks(c) {
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                let rs = 1.0 / (var + 1e-5).sqrt();
                for j in 0..c {
                    out.push((row[j] - mean) * rs * x[1].data[j] + x[2].data[j]);
                }
            }
            out
        }
    }
}

fn projected(out: &[f64], proj: &[f32]) -> f64 {
    out.iter().zip(proj).map(|(o, r)| o * f64::from(*r)).sum()
}

/// Largest gap between the tape's forward value and the `f64` reference.
pub fn forward_gap(kind: &Primitive, inputs: &[DenseArray]) -> Result<f64> {
    let mut g = Graph::standalone();
    let ids: Vec<_> = inputs.iter().map(|a| g.constant(a.clone())).collect();
    let out = g.forward_primitive(kind, &ids)?;
    let refs: Vec<Input<'_>> = inputs
        .iter()
        .map(|a| Input {
            shape: a.shape(),
            data: a.data().iter().map(|v| f64::from(*v)).collect(),
        })
        .collect();
    let want = reference(kind, &refs);
    Ok(g.value(out)
        .data()
        .iter()
        .zip(&want)
        .map(|(a, b)| (f64::from(*a) - b).abs())
        .fold(0.0, f64::max))
}

/// Checks every input element of a primitive against central differences
/// of `sum(out ⊙ R)` for a random projection `R`.
pub fn check_primitive(
    kind: &Primitive,
    inputs: &[DenseArray],
    stream: &mut RandomStream,
) -> Result<GradCheck> {
    let mut g = Graph::standalone();
    let vars: Vec<_> = inputs.iter().map(|a| g.variable(a.clone())).collect();
    let out = g.forward_primitive(kind, &vars)?;
    let shape = g.shape(out).to_vec();
    let proj: Vec<f32> = (0..g.value(out).len())
        .map(|_| stream.uniform(-1.0, 1.0))
        .collect();
    let r = g.constant(DenseArray::new(shape, proj.clone())?);
    let weighted = g.hadamard(out, r)?;
    let loss = g.sum(weighted)?;
    let back = g.backward(loss)?;

    let mut report = GradCheck::default();
    let mut work: Vec<Input<'_>> = inputs
        .iter()
        .map(|a| Input {
            shape: a.shape(),
            data: a.data().iter().map(|v| f64::from(*v)).collect(),
        })
        .collect();
    let h = f64::from(STEP);
    for (j, var) in vars.iter().enumerate() {
        let grad = back
            .variable(*var)
            .cloned()
            .unwrap_or_else(|| DenseArray::zeros(inputs[j].shape()));
        for k in 0..inputs[j].len() {
            let x0 = work[j].data[k];
            work[j].data[k] = x0 + h;
            let plus = projected(&reference(kind, &work), &proj);
            work[j].data[k] = x0 - h;
            let minus = projected(&reference(kind, &work), &proj);
            work[j].data[k] = x0;
            report.record(
                || format!("{} input {j}[{k}]", kind.name()),
                f64::from(grad.data()[k]),
                (plus - minus) / (2.0 * h),
            );
        }
    }
    Ok(report)
}

/// Directional check of a scalar function of a parameter store: for every
/// trainable entry, a random ±1 direction `v` compares `∇L·v` with
/// `(L(θ+hv) − L(θ−hv)) / 2h`.
pub fn check_store<F>(
    store: &mut ParameterStore,
    grads: &Gradients,
    step: f32,
    stream: &mut RandomStream,
    mut loss: F,
) -> Result<GradCheck>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let mut report = GradCheck::default();
    for idx in 0..store.len() {
        let entry = &store.entries()[idx];
        if !entry.trainable {
            continue;
        }
        let name = entry.name.clone();
        let id = store.id(&name)?;
        let dir: Vec<f32> = (0..entry.value.len())
            .map(|_| if stream.draw() & 1 == 0 { 1.0 } else { -1.0 })
            .collect();
        let analytic = grads.get(id).map_or(0.0, |g| {
            g.data()
                .iter()
                .zip(&dir)
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum()
        });
        let original = store.value(id).clone();
        let shifted = |sign: f32| -> Vec<f32> {
            original
                .data()
                .iter()
                .zip(&dir)
                .map(|(x, d)| x + sign * step * d)
                .collect()
        };
        store.value_mut(id).data_mut().copy_from_slice(&shifted(1.0));
        let plus = loss(store)?;
        store.value_mut(id).data_mut().copy_from_slice(&shifted(-1.0));
        let minus = loss(store)?;
        *store.value_mut(id) = original;
        let numeric = (plus - minus) / (2.0 * f64::from(step));
        report.record(|| name.clone(), analytic, numeric);
    }
    if report.checked == 0 {
        return Err(Error::Contract("no trainable parameters to check".into()));
    }
    Ok(report)
}

/// Random inputs exercising every registered primitive, as
/// `(primitive, inputs)` pairs.
pub fn primitive_cases(stream: &mut RandomStream) -> Vec<(Primitive, Vec<DenseArray>)> {
    let mut arr = |shape: &[usize], scale: f32| -> DenseArray {
        let n = shape.iter().product();
        let data = (0..n).map(|_| stream.uniform(-scale, scale)).collect();
        DenseArray::new(shape.to_vec(), data).expect("positive shape")
    };
    let (b, din, dh, l) = (3, 4, 3, 3);
    vec![
        (Primitive::MatMul, vec![arr(&[3, 4], 1.0), arr(&[4, 2], 1.0)]),
        (Primitive::Add, vec![arr(&[3, 4], 1.0), arr(&[3, 4], 1.0)]),
        (Primitive::Add, vec![arr(&[3, 4], 1.0), arr(&[4], 1.0)]),
        (Primitive::Hadamard, vec![arr(&[2, 5], 1.0), arr(&[2, 5], 1.0)]),
        (
            Primitive::Concat,
            vec![arr(&[2, 3], 1.0), arr(&[2, 1], 1.0), arr(&[2, 2], 1.0)],
        ),
        (Primitive::Relu, vec![arr(&[3, 4], 1.0)]),
        (Primitive::Sigmoid, vec![arr(&[3, 4], 2.0)]),
        (Primitive::LogSigmoid, vec![arr(&[3, 4], 3.0)]),
        (Primitive::Softmax, vec![arr(&[3, 4], 2.0)]),
        (
            Primitive::MeanPool {
                segments: vec![vec![0, 2], vec![1], vec![], vec![3, 3, 0]],
            },
            vec![arr(&[4, 3], 1.0)],
        ),
        (
            Primitive::EmbeddingGather {
                indices: vec![2, 0, 2, 4],
            },
            vec![arr(&[5, 3], 1.0)],
        ),
        (
            Primitive::GruCell { mask: None },
            vec![
                arr(&[b, din], 1.0),
                arr(&[b, dh], 1.0),
                arr(&[din, 3 * dh], 0.7),
                arr(&[dh, 3 * dh], 0.7),
                arr(&[3 * dh], 0.5),
                arr(&[3 * dh], 0.5),
            ],
        ),
        (
            Primitive::GruCell {
                mask: Some(vec![1.0, 0.0, 1.0]),
            },
            vec![
                arr(&[b, din], 1.0),
                arr(&[b, dh], 1.0),
                arr(&[din, 3 * dh], 0.7),
                arr(&[dh, 3 * dh], 0.7),
                arr(&[3 * dh], 0.5),
                arr(&[3 * dh], 0.5),
            ],
        ),
        (
            Primitive::CausalSelfAttention {
                seq_len: l,
                valid: None,
            },
            vec![
                arr(&[2 * l, din], 1.0),
                arr(&[din, 3], 0.8),
                arr(&[din, 3], 0.8),
                arr(&[din, 3], 0.8),
            ],
        ),
        (
            Primitive::CausalSelfAttention {
                seq_len: l,
                valid: Some(vec![false, true, true, false, false, true]),
            },
            vec![
                arr(&[2 * l, din], 1.0),
                arr(&[din, 3], 0.8),
                arr(&[din, 3], 0.8),
                arr(&[din, 3], 0.8),
            ],
        ),
        (Primitive::DotProduct, vec![arr(&[3, 4], 1.0), arr(&[3, 4], 1.0)]),
        (Primitive::DotProduct, vec![arr(&[5], 1.0), arr(&[5], 1.0)]),
        (
            Primitive::LayerNorm,
            vec![arr(&[3, 5], 1.0), arr(&[5], 1.0), arr(&[5], 1.0)],
        ),
    ]
}

/// Runs [`check_primitive`] over `points` random draws of every case.
pub fn check_all_primitives(points: usize, seed: u64) -> Result<Vec<(String, GradCheck)>> {
    let mut stream = RandomStream::new("gradcheck", seed);
    let mut out: Vec<(String, GradCheck)> = Vec::new();
    for _ in 0..points {
        for (kind, inputs) in primitive_cases(&mut stream) {
            let r = check_primitive(&kind, &inputs, &mut stream)?;
            match out.iter_mut().find(|(n, _)| n == kind.name()) {
                Some((_, acc)) => acc.merge(r),
                None => out.push((kind.name().to_string(), r)),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_primitives_match_finite_differences() {
        for (name, r) in check_all_primitives(3, 11).unwrap() {
            assert!(r.passed(), "{name}: {} failures, worst {}", r.failures, r.worst);
        }
    }

    #[test]
    fn forward_values_match_reference() {
        let mut stream = RandomStream::new("fwd", 5);
        for (kind, inputs) in primitive_cases(&mut stream) {
            let gap = forward_gap(&kind, &inputs).unwrap();
            assert!(gap < 1e-5, "{} forward gap {gap}", kind.name());
        }
    }

    #[test]
    fn tolerance_rule() {
        assert!(within(1.0, 1.0005));
        assert!(!within(1.0, 1.002));
        assert!(within(0.0, 9e-6));
    }
}
