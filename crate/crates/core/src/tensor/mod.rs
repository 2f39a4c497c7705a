//! Dense 2-D tensors, tape-based reverse-mode autodiff, a seeded RNG and Adam.

mod adam;
mod dense;
mod graph;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use dense::Tensor;
pub use graph::{Graph, Var};
pub use rng::Rng;

pub(crate) use dense::{dot, softmax_in_place};
