//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Tensors are 4-D `(batch, channels, height, width)` arrays of `f64`. A
//! [`Graph`] records operations append-only, so node order is already a
//! topological order and [`Graph::backward`] walks it in reverse exactly once.
//!
//! Learnable weights live in a [`ParamStore`]; each training step binds them
//! into a fresh graph, runs forward and backward, pulls gradients back into
//! the store and lets an optimizer update values. Gradients accumulate in the
//! store until [`ParamStore::zero_grad`] is called.

mod graph;
mod kernels;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{Activation, Graph, Var};
pub(crate) use graph::decode_cell;
pub use layers::{Conv, ConvTranspose};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::{Shape, Tensor};

/// Clamp applied to probabilities inside [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Negative slope used by every hidden-layer leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.1;
