//! Minimal reverse-mode differentiation over dense MLPs.
//!
//! Networks in this crate are plain fully-connected stacks, so gradients are
//! computed by explicit layer-wise backprop over a fixed topology instead of
//! a general tape. That keeps every gradient checkable against central
//! finite differences.
//!
//! The batched entry points ([`forward_batch`], [`backward_batch`]) are the
//! hot path: they lower to strided GEMM via [`crate::scalar::Scalar::gemm`].
//! Single-sample [`forward`] / [`backward`] are thin wrappers over them.

mod adam;
mod mlp;
mod tensor;

pub use adam::{adam_step, adam_step_from_ascent, AdamState};
pub use mlp::{
    backward, backward_batch, backward_batch_into, forward, forward_batch, forward_batch_into,
    BatchTrace, MlpSpec, Nonlinearity,
};
pub use tensor::Tensor;
