//! Plain multi-layer perceptron: ReLU between layers, linear output.

use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParameterStore, RandomStream};

#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
}

impl Mlp {
    /// Registers `prefix/l{k}/w` and `prefix/l{k}/b` for consecutive pairs of
    /// `dims = [in, hidden.., out]`. Biases start at zero.
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        dims: &[usize],
        stream: &mut RandomStream,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("{prefix}: bad layer widths {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, pair) in dims.windows(2).enumerate() {
            let w = store.insert_linear_weight(&format!("{prefix}/l{}/w", k + 1), pair[0], pair[1], stream)?;
            let b = store.insert_zeros(&format!("{prefix}/l{}/b", k + 1), &[pair[1]])?;
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            dims: dims.to_vec(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn output_width(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (g.param(*w), g.param(*b));
            h = g.linear(h, w, b)?;
            if k + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// `[input, d_h × layers]`: the layer-count convention shared by the user
/// and item encoders.
pub fn widths(input: usize, hidden: usize, layers: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(std::iter::repeat_n(hidden, layers))
        .collect()
}
