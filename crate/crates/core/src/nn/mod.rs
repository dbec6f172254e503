//! A small CNN engine: rank-4 tensors, the layer set needed for residual
//! U-Nets, exact backpropagation over a node graph, and SGD.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
mod real;
mod tensor;

pub use graph::{backward, forward_eval, forward_train, Cache, LayerKind, LayerSpec, NetworkSpec, NodeId};
pub use params::{sgd_step, sgd_update, Grads, Param, ParamStore, SgdState};
pub use real::Real;
pub use tensor::Tensor;
