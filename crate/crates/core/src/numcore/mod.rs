//! Dense arrays, a recording gradient tape, the Adam optimizer, named
//! random streams and parameter checkpoints.

mod adam;
mod array;
pub mod checkpoint;
pub(crate) mod gemm;
pub mod gradcheck;
mod graph;
mod rng;
mod store;

pub use adam::Adam;
pub use array::DenseArray;
pub use graph::{Backward, Graph, NodeId, Primitive};
pub use rng::RandomStream;
pub use store::{Gradients, ParamEntry, ParamId, ParameterStore};
pub(crate) use store::hex;
