//! From-scratch neural kernel library built around two spatial attention
//! units: a local self-attention block and a contextual-attention block
//! that mines static (convolutional) and dynamic (attention) context from
//! each key's neighborhood. On top of the kernels sit residual backbone
//! assembly, a parameter/MAC profiler, gradient checking, and a small
//! deterministic trainer.
//!
//! Layout conventions: image tensors are NCHW row-major; relation tensors
//! (per-location attention over a k x k neighborhood) are
//! (N, H, W, k*k, heads). All reductions run in a fixed serial order, so
//! every public entry point is bit-deterministic for a given seed.

pub mod attention;
pub mod cot;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod models;
pub mod profile;
pub mod train;
pub mod ops;
pub mod tensor;

pub use element::{Dtype, Element};
pub use error::{Error, Result};
pub use tensor::{grad_enabled, no_grad, Tensor};
