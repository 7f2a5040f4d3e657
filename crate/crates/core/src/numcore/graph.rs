//! Tape-recording computation graph over [`DenseArray`] values.
//!
//! Every primitive computes its value eagerly. When the graph records, the
//! primitive also keeps whatever it needs for the reverse sweep; an
//! inference graph keeps values only. [`Graph::backward`] consumes the graph
//! and returns the gradients of a scalar node with respect to every
//! parameter it touched.

use std::collections::HashMap;

use super::array::DenseArray;
use super::gemm::{dot64, gemm};
use super::store::{Gradients, ParamId, ParameterStore};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;
/// Sigmoid outputs are kept inside the open interval (0, 1).
const SIGMOID_LO: f32 = 1e-7;
const SIGMOID_HI: f32 = 1.0 - 6e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Forward primitives addressable by kind, used by the generic
/// [`Graph::forward_primitive`] entry point and the gradient checker.
#[derive(Clone, Debug)]
pub enum Primitive {
    MatMul,
    Add,
    Hadamard,
    Concat,
    Relu,
    Sigmoid,
    LogSigmoid,
    Softmax,
    MeanPool { segments: Vec<Vec<u32>> },
    EmbeddingGather { indices: Vec<u32> },
    /// Inputs: x, h, w_ih, w_hh, b_ih, b_hh.
    GruCell { mask: Option<Vec<f32>> },
    /// Inputs: x, w_q, w_k, w_v.
    CausalSelfAttention { seq_len: usize, valid: Option<Vec<bool>> },
    DotProduct,
    /// Inputs: x, gain, bias.
    LayerNorm,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Hadamard => "hadamard",
            Primitive::Concat => "concat",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::LogSigmoid => "log_sigmoid",
            Primitive::Softmax => "softmax",
            Primitive::MeanPool { .. } => "mean_pool",
            Primitive::EmbeddingGather { .. } => "embedding_gather",
            Primitive::GruCell { .. } => "gru_cell",
            Primitive::CausalSelfAttention { .. } => "causal_self_attention",
            Primitive::DotProduct => "dot_product",
            Primitive::LayerNorm => "layer_norm",
        }
    }
}

enum Value {
    Owned(DenseArray),
    Param(ParamId),
}

struct GruSaved {
    r: Vec<f32>,
    z: Vec<f32>,
    n: Vec<f32>,
    hn: Vec<f32>,
    mask: Option<Vec<f32>>,
}

struct AttnSaved {
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    probs: Vec<f32>,
    seq_len: usize,
}

enum Op {
    Leaf,
    Variable,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Affine(NodeId, f32),
    Concat(Vec<NodeId>),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LogSigmoid(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    MeanPool(NodeId, Vec<Vec<u32>>),
    Gather(NodeId, Vec<u32>),
    Dot(NodeId, NodeId),
    RowScale(NodeId, NodeId),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Gru([NodeId; 6], Box<GruSaved>),
    Attention([NodeId; 4], Box<AttnSaved>),
    LayerNorm([NodeId; 3], Vec<f32>, Vec<f32>),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Output of a reverse sweep.
pub struct Backward {
    pub params: Gradients,
    variables: HashMap<NodeId, DenseArray>,
}

impl Backward {
    /// Gradient of a node created with [`Graph::variable`].
    pub fn variable(&self, id: NodeId) -> Option<&DenseArray> {
        self.variables.get(&id)
    }
}

pub struct Graph<'s> {
    store: Option<&'s ParameterStore>,
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
    record: bool,
}

fn rows_cols(a: &DenseArray) -> (usize, usize) {
    match a.rank() {
        0 => (1, 1),
        1 => (1, a.shape()[0]),
        _ => (a.len() / a.cols(), a.cols()),
    }
}

fn sigmoid(x: f32) -> f32 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_LO, SIGMOID_HI)
}

fn log_sigmoid(x: f32) -> f32 {
    let x = f64::from(x);
    (x.min(0.0) - (-x.abs()).exp().ln_1p()) as f32
}

fn col_sums(g: &[f32], cols: usize) -> Vec<f32> {
    let mut acc = vec![0f64; cols];
    for row in g.chunks(cols) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += f64::from(*v);
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

impl<'s> Graph<'s> {
    /// Recording graph bound to a parameter store.
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            params: HashMap::new(),
            record: true,
        }
    }

    /// Forward-only graph; no tape state is kept.
    pub fn inference(store: &'s ParameterStore) -> Self {
        Self {
            record: false,
            ..Self::new(store)
        }
    }

    /// Recording graph without parameters (constants and variables only).
    pub fn standalone() -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            params: HashMap::new(),
            record: true,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseArray {
        match &self.nodes[id.0].value {
            Value::Owned(a) => a,
            Value::Param(p) => self
                .store
                .expect("parameter node without store")
                .value(*p),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn push_raw(&mut self, value: Value, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn push(
        &mut self,
        name: &'static str,
        value: DenseArray,
        inputs: &[NodeId],
        op: impl FnOnce() -> Op,
    ) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {name}")));
        }
        let needs = self.record && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        let op = if needs { op() } else { Op::Leaf };
        Ok(self.push_raw(Value::Owned(value), op, needs))
    }

    pub fn constant(&mut self, value: DenseArray) -> NodeId {
        self.push_raw(Value::Owned(value), Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Backward::variable`].
    pub fn variable(&mut self, value: DenseArray) -> NodeId {
        let rec = self.record;
        self.push_raw(Value::Owned(value), Op::Variable, rec)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.params.get(&id) {
            return *n;
        }
        let store = self.store.expect("graph has no parameter store");
        let needs = self.record && store.entry(id).trainable;
        let n = self.push_raw(Value::Param(id), Op::Param(id), needs);
        self.params.insert(id, n);
        n
    }

    pub fn param_named(&mut self, name: &str) -> Result<NodeId> {
        let store = self
            .store
            .ok_or_else(|| Error::Lookup(format!("no store for `{name}`")))?;
        let id = store.id(name)?;
        Ok(self.param(id))
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }

    /// Dispatches a primitive by kind.
    pub fn forward_primitive(&mut self, kind: &Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::dim(
                    kind.name(),
                    format!("expected {n} inputs, got {}", inputs.len()),
                ));
            }
            Ok(())
        };
        match kind {
            Primitive::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Hadamard => {
                arity(2)?;
                self.hadamard(inputs[0], inputs[1])
            }
            Primitive::Concat => self.concat(inputs),
            Primitive::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            Primitive::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            Primitive::LogSigmoid => {
                arity(1)?;
                self.log_sigmoid(inputs[0])
            }
            Primitive::Softmax => {
                arity(1)?;
                self.softmax(inputs[0])
            }
            Primitive::MeanPool { segments } => {
                arity(1)?;
                self.mean_pool(inputs[0], segments)
            }
            Primitive::EmbeddingGather { indices } => {
                arity(1)?;
                self.gather(inputs[0], indices)
            }
            Primitive::GruCell { mask } => {
                arity(6)?;
                self.gru_cell(
                    [
                        inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5],
                    ],
                    mask.clone(),
                )
            }
            Primitive::CausalSelfAttention { seq_len, valid } => {
                arity(4)?;
                self.causal_self_attention(
                    [inputs[0], inputs[1], inputs[2], inputs[3]],
                    *seq_len,
                    valid.as_deref(),
                )
            }
            Primitive::DotProduct => {
                arity(2)?;
                self.dot(inputs[0], inputs[1])
            }
            Primitive::LayerNorm => {
                arity(3)?;
                self.layer_norm(inputs[0], inputs[1], inputs[2])
            }
        }
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let v = DenseArray::matrix(m, n, out)?;
        self.push("matmul", v, &[a, b], || Op::MatMul(a, b))
    }

    /// `x · w + b` for a weight `[in, out]` and bias `[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Elementwise sum; a rank-1 `b` broadcasts over the rows of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let v = DenseArray::new(av.shape().to_vec(), data)?;
            return self.push("add", v, &[a, b], || Op::Add(a, b));
        }
        if bv.rank() == 1 && av.rank() == 2 && av.shape()[1] == bv.shape()[0] {
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(bv.len()) {
                for (x, y) in row.iter_mut().zip(bv.data()) {
                    *x += y;
                }
            }
            let v = DenseArray::new(av.shape().to_vec(), data)?;
            return self.push("add", v, &[a, b], || Op::AddRow(a, b));
        }
        Err(Error::dim(
            "add",
            format!("{:?} + {:?}", av.shape(), bv.shape()),
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(
                "sub",
                format!("{:?} - {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let v = DenseArray::new(av.shape().to_vec(), data)?;
        self.push("sub", v, &[a, b], || Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(
                "hadamard",
                format!("{:?} * {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let v = DenseArray::new(av.shape().to_vec(), data)?;
        self.push("hadamard", v, &[a, b], || Op::Hadamard(a, b))
    }

    /// `mul · x + add`, elementwise.
    pub fn affine(&mut self, x: NodeId, mul: f32, add: f32) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| mul * v + add).collect();
        let v = DenseArray::new(xv.shape().to_vec(), data)?;
        self.push("affine", v, &[x], || Op::Affine(x, mul))
    }

    pub fn scale(&mut self, x: NodeId, c: f32) -> Result<NodeId> {
        self.affine(x, c, 0.0)
    }

    /// Concatenation along the last axis. Inputs must agree on the row count
    /// (or all be vectors).
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::dim("concat", "no inputs"));
        }
        let first = self.value(parts[0]);
        let rank = first.rank();
        let rows = first.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let v = self.value(*p);
            if v.rank() != rank || v.rows() != rows || rank == 0 || rank > 2 {
                return Err(Error::dim(
                    "concat",
                    format!("incompatible part shape {:?}", v.shape()),
                ));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        let v = DenseArray::new(shape, data)?;
        let owned = parts.to_vec();
        self.push("concat", v, parts, move || Op::Concat(owned))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (rows, cols) = rows_cols(xv);
        if xv.rank() != 2 || start >= end || end > cols {
            return Err(Error::dim(
                "slice_cols",
                format!("{start}..{end} of {:?}", xv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let v = DenseArray::matrix(rows, end - start, data)?;
        self.push("slice_cols", v, &[x], || Op::SliceCols(x, start))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 || start >= end || end > xv.shape()[0] {
            return Err(Error::dim(
                "slice_rows",
                format!("{start}..{end} of {:?}", xv.shape()),
            ));
        }
        let c = xv.cols();
        let v = DenseArray::matrix(end - start, c, xv.data()[start * c..end * c].to_vec())?;
        self.push("slice_rows", v, &[x], || Op::SliceRows(x, start))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", v, &[x], || Op::Reshape(x))
    }

    // ---- pointwise nonlinearities ------------------------------------------

    fn map_unary(&mut self, name: &'static str, x: NodeId, f: impl Fn(f32) -> f32, op: fn(NodeId) -> Op) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| f(*v)).collect();
        let v = DenseArray::new(xv.shape().to_vec(), data)?;
        self.push(name, v, &[x], || op(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.map_unary("relu", x, |v| v.max(0.0), Op::Relu)
    }

    /// Logistic function, with outputs held strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.map_unary("sigmoid", x, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.map_unary("tanh", x, f32::tanh, Op::Tanh)
    }

    pub fn log_sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.map_unary("log_sigmoid", x, log_sigmoid, Op::LogSigmoid)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut s = 0f64;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += f64::from(*v);
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / s) as f32;
            }
        }
        let v = DenseArray::new(xv.shape().to_vec(), data)?;
        self.push("softmax", v, &[x], || Op::Softmax(x))
    }

    /// Log-softmax over the last axis (log-sum-exp stabilised).
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let s: f64 = row.iter().map(|v| f64::from(*v - m).exp()).sum();
            let lse = f64::from(m) + s.ln();
            for v in row.iter_mut() {
                *v = (f64::from(*v) - lse) as f32;
            }
        }
        let v = DenseArray::new(xv.shape().to_vec(), data)?;
        self.push("log_softmax", v, &[x], || Op::LogSoftmax(x))
    }

    // ---- lookups and pooling -----------------------------------------------

    /// Rows of `table` selected by `indices`; `[V, d] -> [n, d]`, or
    /// `[V] -> [n]` for a rank-1 table.
    pub fn gather(&mut self, table: NodeId, indices: &[u32]) -> Result<NodeId> {
        let tv = self.value(table);
        let (vocab, width) = match tv.rank() {
            1 => (tv.len(), 1),
            2 => (tv.shape()[0], tv.shape()[1]),
            _ => return Err(Error::dim("embedding_gather", format!("table {:?}", tv.shape()))),
        };
        if indices.is_empty() {
            return Err(Error::dim("embedding_gather", "no indices"));
        }
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            let i = i as usize;
            if i >= vocab {
                return Err(Error::Lookup(format!(
                    "embedding_gather index {i} out of range for {vocab} rows"
                )));
            }
            data.extend_from_slice(&tv.data()[i * width..(i + 1) * width]);
        }
        let shape = if tv.rank() == 1 {
            vec![indices.len()]
        } else {
            vec![indices.len(), width]
        };
        let v = DenseArray::new(shape, data)?;
        let idx = indices.to_vec();
        self.push("embedding_gather", v, &[table], move || Op::Gather(table, idx))
    }

    /// Mean of the table rows named by each segment; an empty segment pools
    /// to the zero vector.
    pub fn mean_pool(&mut self, table: NodeId, segments: &[Vec<u32>]) -> Result<NodeId> {
        let tv = self.value(table);
        if tv.rank() != 2 || segments.is_empty() {
            return Err(Error::dim("mean_pool", format!("table {:?}", tv.shape())));
        }
        let (vocab, width) = (tv.shape()[0], tv.shape()[1]);
        let mut data = vec![0f32; segments.len() * width];
        let mut acc = vec![0f64; width];
        for (s, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                continue;
            }
            acc.fill(0.0);
            for &i in seg {
                let i = i as usize;
                if i >= vocab {
                    return Err(Error::Lookup(format!(
                        "mean_pool index {i} out of range for {vocab} rows"
                    )));
                }
                for (a, v) in acc.iter_mut().zip(tv.row(i)) {
                    *a += f64::from(*v);
                }
            }
            let inv = 1.0 / seg.len() as f64;
            for (o, a) in data[s * width..(s + 1) * width].iter_mut().zip(&acc) {
                *o = (a * inv) as f32;
            }
        }
        let v = DenseArray::matrix(segments.len(), width, data)?;
        let segs = segments.to_vec();
        self.push("mean_pool", v, &[table], move || Op::MeanPool(table, segs))
    }

    // ---- reductions ----------------------------------------------------------

    /// Row-wise inner product: `[n, d] · [n, d] -> [n]`; two vectors give a
    /// scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.rank() == 0 || av.rank() > 2 {
            return Err(Error::dim(
                "dot_product",
                format!("{:?} . {:?}", av.shape(), bv.shape()),
            ));
        }
        let c = av.cols();
        let out: Vec<f32> = av
            .data()
            .chunks(c)
            .zip(bv.data().chunks(c))
            .map(|(x, y)| dot64(x, y) as f32)
            .collect();
        let v = if av.rank() == 1 {
            DenseArray::scalar(out[0])
        } else {
            DenseArray::vector(out)
        };
        self.push("dot_product", v, &[a, b], || Op::Dot(a, b))
    }

    /// Multiplies row `i` of `x` by `s[i]`.
    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (xv, sv) = (self.value(x), self.value(s));
        if xv.rank() != 2 || sv.len() != xv.shape()[0] {
            return Err(Error::dim(
                "row_scale",
                format!("{:?} by {:?}", xv.shape(), sv.shape()),
            ));
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for (row, k) in data.chunks_mut(c).zip(sv.data()) {
            row.iter_mut().for_each(|v| *v *= k);
        }
        let v = DenseArray::new(xv.shape().to_vec(), data)?;
        self.push("row_scale", v, &[x, s], || Op::RowScale(x, s))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().map(|v| f64::from(*v)).sum();
        self.push("sum", DenseArray::scalar(s as f32), &[x], || Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().map(|v| f64::from(*v)).sum::<f64>() / xv.len() as f64;
        self.push("mean", DenseArray::scalar(s as f32), &[x], || Op::Mean(x))
    }

    // ---- fused blocks --------------------------------------------------------

    /// One GRU step (`[r | z | n]` gate layout). With a mask, rows whose
    /// mask is 0 pass `h` through unchanged.
    pub fn gru_cell(&mut self, inputs: [NodeId; 6], mask: Option<Vec<f32>>) -> Result<NodeId> {
        let [x, h, w_ih, w_hh, b_ih, b_hh] = inputs;
        let (xv, hv) = (self.value(x), self.value(h));
        let (wi, wh) = (self.value(w_ih), self.value(w_hh));
        let (bi, bh) = (self.value(b_ih), self.value(b_hh));
        if xv.rank() != 2 || hv.rank() != 2 || xv.shape()[0] != hv.shape()[0] {
            return Err(Error::dim(
                "gru_cell",
                format!("x {:?} h {:?}", xv.shape(), hv.shape()),
            ));
        }
        let (b, din, dh) = (xv.shape()[0], xv.shape()[1], hv.shape()[1]);
        if wi.shape() != [din, 3 * dh]
            || wh.shape() != [dh, 3 * dh]
            || bi.shape() != [3 * dh]
            || bh.shape() != [3 * dh]
            || mask.as_ref().is_some_and(|m| m.len() != b)
        {
            return Err(Error::dim(
                "gru_cell",
                format!(
                    "weights {:?}/{:?} biases {:?}/{:?} for din={din} dh={dh}",
                    wi.shape(),
                    wh.shape(),
                    bi.shape(),
                    bh.shape()
                ),
            ));
        }
        let g3 = 3 * dh;
        let mut gi = vec![0.0; b * g3];
        let mut gh = vec![0.0; b * g3];
        gemm(b, din, g3, xv.data(), false, wi.data(), false, &mut gi, false);
        gemm(b, dh, g3, hv.data(), false, wh.data(), false, &mut gh, false);
        let mut r = vec![0.0; b * dh];
        let mut z = vec![0.0; b * dh];
        let mut n = vec![0.0; b * dh];
        let mut hn = vec![0.0; b * dh];
        let mut out = vec![0.0; b * dh];
        for row in 0..b {
            let gi_r = &gi[row * g3..(row + 1) * g3];
            let gh_r = &gh[row * g3..(row + 1) * g3];
            let m = mask.as_ref().map_or(1.0, |m| m[row]);
            for j in 0..dh {
                let o = row * dh + j;
                let rr = sigmoid(gi_r[j] + bi.data()[j] + gh_r[j] + bh.data()[j]);
                let zz = sigmoid(
                    gi_r[dh + j] + bi.data()[dh + j] + gh_r[dh + j] + bh.data()[dh + j],
                );
                let hnn = gh_r[2 * dh + j] + bh.data()[2 * dh + j];
                let nn = (gi_r[2 * dh + j] + bi.data()[2 * dh + j] + rr * hnn).tanh();
                let hp = hv.data()[o];
                let hnew = (1.0 - zz) * nn + zz * hp;
                out[o] = m * hnew + (1.0 - m) * hp;
                r[o] = rr;
                z[o] = zz;
                n[o] = nn;
                hn[o] = hnn;
            }
        }
        let v = DenseArray::matrix(b, dh, out)?;
        self.push("gru_cell", v, &inputs, move || {
            Op::Gru(inputs, Box::new(GruSaved { r, z, n, hn, mask }))
        })
    }

    /// Single-head causal self-attention over `x = [B·L, d_in]` laid out
    /// sequence-major. Position `i` attends to valid positions `j ≤ i` of
    /// its own sequence; a position with no valid key outputs zeros.
    pub fn causal_self_attention(
        &mut self,
        inputs: [NodeId; 4],
        seq_len: usize,
        valid: Option<&[bool]>,
    ) -> Result<NodeId> {
        let [x, wq, wk, wv] = inputs;
        let xv = self.value(x);
        if xv.rank() != 2 || seq_len == 0 || xv.shape()[0] % seq_len != 0 {
            return Err(Error::dim(
                "causal_self_attention",
                format!("x {:?} with seq_len {seq_len}", xv.shape()),
            ));
        }
        let (rows, din) = (xv.shape()[0], xv.shape()[1]);
        let d = self.value(wq).cols();
        for w in [wq, wk, wv] {
            if self.value(w).shape() != [din, d] {
                return Err(Error::dim(
                    "causal_self_attention",
                    format!("projection {:?}, expected [{din}, {d}]", self.value(w).shape()),
                ));
            }
        }
        if valid.is_some_and(|m| m.len() != rows) {
            return Err(Error::dim("causal_self_attention", "mask length"));
        }
        let mut q = vec![0.0; rows * d];
        let mut k = vec![0.0; rows * d];
        let mut v = vec![0.0; rows * d];
        gemm(rows, din, d, xv.data(), false, self.value(wq).data(), false, &mut q, false);
        gemm(rows, din, d, xv.data(), false, self.value(wk).data(), false, &mut k, false);
        gemm(rows, din, d, xv.data(), false, self.value(wv).data(), false, &mut v, false);
        let scale = 1.0 / (d as f64).sqrt();
        let l = seq_len;
        let nseq = rows / l;
        let mut probs = vec![0f32; nseq * l * l];
        let mut out = vec![0f32; rows * d];
        let mut scores = vec![0f64; l];
        for s in 0..nseq {
            for i in 0..l {
                let qi = &q[(s * l + i) * d..(s * l + i + 1) * d];
                let mut mx = f64::NEG_INFINITY;
                for j in 0..=i {
                    let ok = valid.is_none_or(|m| m[s * l + j]);
                    scores[j] = if ok {
                        dot64(qi, &k[(s * l + j) * d..(s * l + j + 1) * d]) * scale
                    } else {
                        f64::NEG_INFINITY
                    };
                    mx = mx.max(scores[j]);
                }
                if mx == f64::NEG_INFINITY {
                    continue;
                }
                let denom: f64 = scores[..=i].iter().map(|sc| (sc - mx).exp()).sum();
                let prow = &mut probs[(s * l + i) * l..(s * l + i + 1) * l];
                let orow = &mut out[(s * l + i) * d..(s * l + i + 1) * d];
                for j in 0..=i {
                    let p = ((scores[j] - mx).exp() / denom) as f32;
                    prow[j] = p;
                    if p != 0.0 {
                        let vj = &v[(s * l + j) * d..(s * l + j + 1) * d];
                        for (o, val) in orow.iter_mut().zip(vj) {
                            *o += p * val;
                        }
                    }
                }
            }
        }
        let value = DenseArray::matrix(rows, d, out)?;
        self.push("causal_self_attention", value, &inputs, move || {
            Op::Attention(
                inputs,
                Box::new(AttnSaved {
                    q,
                    k,
                    v,
                    probs,
                    seq_len: l,
                }),
            )
        })
    }

    /// Row-wise layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (rows, c) = rows_cols(xv);
        let (gv, bv) = (self.value(gain), self.value(bias));
        if xv.rank() != 2 || gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::dim(
                "layer_norm",
                format!("x {:?} gain {:?} bias {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0f32; rows * c];
        let mut xhat = vec![0f32; rows * c];
        let mut rstd = vec![0f32; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().map(|v| f64::from(*v)).sum::<f64>() / c as f64;
            let var = row
                .iter()
                .map(|v| (f64::from(*v) - mean).powi(2))
                .sum::<f64>()
                / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs as f32;
            for j in 0..c {
                let xh = ((f64::from(row[j]) - mean) * rs) as f32;
                xhat[r * c + j] = xh;
                out[r * c + j] = xh * gv.data()[j] + bv.data()[j];
            }
        }
        let v = DenseArray::matrix(rows, c, out)?;
        self.push("layer_norm", v, &[x, gain, bias], move || {
            Op::LayerNorm([x, gain, bias], xhat, rstd)
        })
    }

    // ---- reverse sweep ---------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every trainable
    /// parameter and variable reachable from it.
    pub fn backward(self, loss: NodeId) -> Result<Backward> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.record {
            return Err(Error::Contract("backward on an inference graph".into()));
        }
        let n_params = self.store.map_or(0, ParameterStore::len);
        let mut out = Backward {
            params: Gradients {
                slots: (0..n_params).map(|_| None).collect(),
            },
            variables: HashMap::new(),
        };
        let mut grads: Vec<Option<DenseArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseArray::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backprop_node(idx, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: DenseArray,
        grads: &mut [Option<DenseArray>],
        out: &mut Backward,
    ) -> Result<()> {
        let acc = |grads: &mut [Option<DenseArray>], id: NodeId, v: DenseArray| {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&v),
                slot @ None => *slot = Some(v),
            }
        };
        let like = |id: NodeId, data: Vec<f32>| -> DenseArray {
            DenseArray::new(self.value(id).shape().to_vec(), data).expect("gradient shape")
        };
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Variable => {
                let id = NodeId(idx);
                match out.variables.get_mut(&id) {
                    Some(e) => e.add_assign(&g),
                    None => {
                        out.variables.insert(id, g);
                    }
                }
            }
            Op::Param(p) => {
                let slot = &mut out.params.slots[p.0];
                match slot {
                    Some(e) => e.add_assign(&g),
                    None => *slot = Some(g),
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bv.data(), true, &mut da, false);
                    acc(grads, *a, like(*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, gd, false, &mut db, false);
                    acc(grads, *b, like(*b, db));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, g);
                }
            }
            Op::AddRow(a, b) => {
                if self.needs(*b) {
                    let cols = self.value(*b).len();
                    acc(grads, *b, like(*b, col_sums(gd, cols)));
                }
                if self.needs(*a) {
                    acc(grads, *a, g);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*b) {
                    acc(grads, *b, like(*b, gd.iter().map(|v| -v).collect()));
                }
                if self.needs(*a) {
                    acc(grads, *a, g);
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = gd.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    acc(grads, *a, like(*a, d));
                }
                if self.needs(*b) {
                    let d = gd.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    acc(grads, *b, like(*b, d));
                }
            }
            Op::Affine(x, mul) => {
                acc(grads, *x, like(*x, gd.iter().map(|v| v * mul).collect()));
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        acc(grads, *p, like(*p, d));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let (rows, cols) = rows_cols(xv);
                let w = g.cols();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                acc(grads, *x, like(*x, d));
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = vec![0.0; xv.len()];
                d[start * c..start * c + gd.len()].copy_from_slice(gd);
                acc(grads, *x, like(*x, d));
            }
            Op::Reshape(x) => {
                acc(grads, *x, like(*x, g.into_data()));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = gd
                    .iter()
                    .zip(xv.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(grads, *x, like(*x, d));
            }
            Op::Sigmoid(x) => {
                let y = self.value(NodeId(idx));
                let d = gd
                    .iter()
                    .zip(y.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                acc(grads, *x, like(*x, d));
            }
            Op::Tanh(x) => {
                let y = self.value(NodeId(idx));
                let d = gd
                    .iter()
                    .zip(y.data())
                    .map(|(g, t)| g * (1.0 - t * t))
                    .collect();
                acc(grads, *x, like(*x, d));
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(*x);
                let d = gd
                    .iter()
                    .zip(xv.data())
                    .map(|(g, v)| g * sigmoid_exact(-*v))
                    .collect();
                acc(grads, *x, like(*x, d));
            }
            Op::Softmax(x) => {
                let y = self.value(NodeId(idx));
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)) {
                    let s = dot64(gr, yr) as f32;
                    for ((o, yy), gg) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yy * (gg - s);
                    }
                }
                acc(grads, *x, like(*x, d));
            }
            Op::LogSoftmax(x) => {
                let y = self.value(NodeId(idx));
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)) {
                    let s: f64 = gr.iter().map(|v| f64::from(*v)).sum();
                    for ((o, yy), gg) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = gg - (f64::from(yy.exp()) * s) as f32;
                    }
                }
                acc(grads, *x, like(*x, d));
            }
            Op::Gather(table, indices) => {
                let tv = self.value(*table);
                let width = if tv.rank() == 1 { 1 } else { tv.cols() };
                let mut d = vec![0.0; tv.len()];
                for (k, &i) in indices.iter().enumerate() {
                    let i = i as usize;
                    for (o, v) in d[i * width..(i + 1) * width]
                        .iter_mut()
                        .zip(&gd[k * width..(k + 1) * width])
                    {
                        *o += v;
                    }
                }
                acc(grads, *table, like(*table, d));
            }
            Op::MeanPool(table, segments) => {
                let tv = self.value(*table);
                let width = tv.cols();
                let mut d = vec![0.0; tv.len()];
                for (s, seg) in segments.iter().enumerate() {
                    if seg.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / seg.len() as f32;
                    let gs = &gd[s * width..(s + 1) * width];
                    for &i in seg {
                        let i = i as usize;
                        for (o, v) in d[i * width..(i + 1) * width].iter_mut().zip(gs) {
                            *o += v * inv;
                        }
                    }
                }
                acc(grads, *table, like(*table, d));
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = av.cols();
                if self.needs(*a) {
                    let mut d = Vec::with_capacity(av.len());
                    for (row, gg) in bv.data().chunks(c).zip(gd) {
                        d.extend(row.iter().map(|v| v * gg));
                    }
                    acc(grads, *a, like(*a, d));
                }
                if self.needs(*b) {
                    let mut d = Vec::with_capacity(bv.len());
                    for (row, gg) in av.data().chunks(c).zip(gd) {
                        d.extend(row.iter().map(|v| v * gg));
                    }
                    acc(grads, *b, like(*b, d));
                }
            }
            Op::RowScale(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let c = xv.cols();
                if self.needs(*x) {
                    let mut d = gd.to_vec();
                    for (row, k) in d.chunks_mut(c).zip(sv.data()) {
                        row.iter_mut().for_each(|v| *v *= k);
                    }
                    acc(grads, *x, like(*x, d));
                }
                if self.needs(*s) {
                    let d = gd
                        .chunks(c)
                        .zip(xv.data().chunks(c))
                        .map(|(gr, xr)| dot64(gr, xr) as f32)
                        .collect();
                    acc(grads, *s, like(*s, d));
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc(grads, *x, like(*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(grads, *x, like(*x, vec![gd[0] / n as f32; n]));
            }
            Op::Gru(inputs, saved) => self.backprop_gru(inputs, saved, gd, grads, &acc)?,
            Op::Attention(inputs, saved) => {
                self.backprop_attention(inputs, saved, gd, grads, &acc)?
            }
            Op::LayerNorm([x, gain, bias], xhat, rstd) => {
                let c = g.cols();
                let rows = g.rows();
                let gain_v = self.value(*gain).data();
                if self.needs(*gain) {
                    let mut dg = vec![0f64; c];
                    for (gr, xr) in gd.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += f64::from(gr[j]) * f64::from(xr[j]);
                        }
                    }
                    acc(grads, *gain, like(*gain, dg.into_iter().map(|v| v as f32).collect()));
                }
                if self.needs(*bias) {
                    acc(grads, *bias, like(*bias, col_sums(gd, c)));
                }
                if self.needs(*x) {
                    let mut dx = vec![0f32; rows * c];
                    for r in 0..rows {
                        let gr = &gd[r * c..(r + 1) * c];
                        let xr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = 0f64;
                        let mut m2 = 0f64;
                        for j in 0..c {
                            let dxh = f64::from(gr[j]) * f64::from(gain_v[j]);
                            m1 += dxh;
                            m2 += dxh * f64::from(xr[j]);
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        let rs = f64::from(rstd[r]);
                        for j in 0..c {
                            let dxh = f64::from(gr[j]) * f64::from(gain_v[j]);
                            dx[r * c + j] = (rs * (dxh - m1 - f64::from(xr[j]) * m2)) as f32;
                        }
                    }
                    acc(grads, *x, like(*x, dx));
                }
            }
        }
        Ok(())
    }

    fn backprop_gru(
        &self,
        inputs: &[NodeId; 6],
        saved: &GruSaved,
        gd: &[f32],
        grads: &mut [Option<DenseArray>],
        acc: &impl Fn(&mut [Option<DenseArray>], NodeId, DenseArray),
    ) -> Result<()> {
        let [x, h, w_ih, w_hh, b_ih, b_hh] = *inputs;
        let (xv, hv) = (self.value(x), self.value(h));
        let (b, din, dh) = (xv.shape()[0], xv.shape()[1], hv.shape()[1]);
        let g3 = 3 * dh;
        let mut dgi = vec![0f32; b * g3];
        let mut dgh = vec![0f32; b * g3];
        let mut dh_total = vec![0f32; b * dh];
        for row in 0..b {
            let m = saved.mask.as_ref().map_or(1.0, |m| m[row]);
            for j in 0..dh {
                let o = row * dh + j;
                let dout = gd[o];
                let dhp = m * dout;
                let (r, z, n, hn) = (saved.r[o], saved.z[o], saved.n[o], saved.hn[o]);
                let hp = hv.data()[o];
                dh_total[o] = (1.0 - m) * dout + dhp * z;
                let dn = dhp * (1.0 - z);
                let dz = dhp * (hp - n);
                let dn_pre = dn * (1.0 - n * n);
                let dr = dn_pre * hn;
                let dr_pre = dr * r * (1.0 - r);
                let dz_pre = dz * z * (1.0 - z);
                let base = row * g3;
                dgi[base + j] = dr_pre;
                dgi[base + dh + j] = dz_pre;
                dgi[base + 2 * dh + j] = dn_pre;
                dgh[base + j] = dr_pre;
                dgh[base + dh + j] = dz_pre;
                dgh[base + 2 * dh + j] = dn_pre * r;
            }
        }
        let like = |id: NodeId, data: Vec<f32>| -> DenseArray {
            DenseArray::new(self.value(id).shape().to_vec(), data).expect("gradient shape")
        };
        if self.needs(x) {
            let mut dx = vec![0f32; b * din];
            gemm(b, g3, din, &dgi, false, self.value(w_ih).data(), true, &mut dx, false);
            acc(grads, x, like(x, dx));
        }
        if self.needs(h) {
            gemm(b, g3, dh, &dgh, false, self.value(w_hh).data(), true, &mut dh_total, true);
            acc(grads, h, like(h, dh_total));
        }
        if self.needs(w_ih) {
            let mut dw = vec![0f32; din * g3];
            gemm(din, b, g3, xv.data(), true, &dgi, false, &mut dw, false);
            acc(grads, w_ih, like(w_ih, dw));
        }
        if self.needs(w_hh) {
            let mut dw = vec![0f32; dh * g3];
            gemm(dh, b, g3, hv.data(), true, &dgh, false, &mut dw, false);
            acc(grads, w_hh, like(w_hh, dw));
        }
        if self.needs(b_ih) {
            acc(grads, b_ih, like(b_ih, col_sums(&dgi, g3)));
        }
        if self.needs(b_hh) {
            acc(grads, b_hh, like(b_hh, col_sums(&dgh, g3)));
        }
        Ok(())
    }

    fn backprop_attention(
        &self,
        inputs: &[NodeId; 4],
        saved: &AttnSaved,
        gd: &[f32],
        grads: &mut [Option<DenseArray>],
        acc: &impl Fn(&mut [Option<DenseArray>], NodeId, DenseArray),
    ) -> Result<()> {
        let [x, wq, wk, wv] = *inputs;
        let xv = self.value(x);
        let (rows, din) = (xv.shape()[0], xv.shape()[1]);
        let d = self.value(wq).cols();
        let l = saved.seq_len;
        let nseq = rows / l;
        let scale = (1.0 / (d as f64).sqrt()) as f32;
        let mut dq = vec![0f32; rows * d];
        let mut dk = vec![0f32; rows * d];
        let mut dv = vec![0f32; rows * d];
        let mut dp = vec![0f32; l];
        for s in 0..nseq {
            for i in 0..l {
                let prow = &saved.probs[(s * l + i) * l..(s * l + i + 1) * l];
                let go = &gd[(s * l + i) * d..(s * l + i + 1) * d];
                let mut weighted = 0f64;
                for j in 0..=i {
                    let p = prow[j];
                    if p == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &saved.v[(s * l + j) * d..(s * l + j + 1) * d];
                    dp[j] = dot64(go, vj) as f32;
                    weighted += f64::from(p) * f64::from(dp[j]);
                    for (o, gv) in dv[(s * l + j) * d..(s * l + j + 1) * d].iter_mut().zip(go) {
                        *o += p * gv;
                    }
                }
                for j in 0..=i {
                    let p = prow[j];
                    if p == 0.0 {
                        continue;
                    }
                    let ds = p * (dp[j] - weighted as f32) * scale;
                    let qi = (s * l + i) * d;
                    let kj = (s * l + j) * d;
                    for t in 0..d {
                        dq[qi + t] += ds * saved.k[kj + t];
                        dk[kj + t] += ds * saved.q[qi + t];
                    }
                }
            }
        }
        let like = |id: NodeId, data: Vec<f32>| -> DenseArray {
            DenseArray::new(self.value(id).shape().to_vec(), data).expect("gradient shape")
        };
        if self.needs(x) {
            let mut dx = vec![0f32; rows * din];
            gemm(rows, d, din, &dq, false, self.value(wq).data(), true, &mut dx, true);
            gemm(rows, d, din, &dk, false, self.value(wk).data(), true, &mut dx, true);
            gemm(rows, d, din, &dv, false, self.value(wv).data(), true, &mut dx, true);
            acc(grads, x, like(x, dx));
        }
        for (w, dmat) in [(wq, &dq), (wk, &dk), (wv, &dv)] {
            if self.needs(w) {
                let mut dw = vec![0f32; din * d];
                gemm(din, rows, d, xv.data(), true, dmat, false, &mut dw, false);
                acc(grads, w, like(w, dw));
            }
        }
        Ok(())
    }
}

fn sigmoid_exact(x: f32) -> f32 {
    let x = f64::from(x);
    (if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }) as f32
}
