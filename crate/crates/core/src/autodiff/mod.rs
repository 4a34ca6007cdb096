//! Dense `f32` tensors with tape-based reverse-mode gradients, covering the
//! operation set of the three networks, and the plain SGD update.

mod distance;
pub(crate) mod kernels;
mod param;
mod tape;
mod tensor;

pub use distance::{pairwise_euclidean, pairwise_kl, EUCLIDEAN_EPS, KL_FLOOR};
pub use param::{Gradients, ParamId, ParamSet, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Softmax probabilities of a logit vector, computed in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    kernels::softmax(logits)
}
