//! Differentiable kernel operations.
//!
//! Every op validates operand shapes up front, computes its forward value
//! into a fresh buffer, and registers a backward closure on the tape (see
//! [`crate::tensor`]). Reductions run in a fixed serial order, so results
//! are bit-reproducible across runs on the same target.

pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod softmax;

pub use conv::{conv2d, Conv2dArgs};
pub use elementwise::concat_channels;
pub use linear::linear;
pub use loss::smoothed_cross_entropy;
pub use norm::{batch_norm2d, BnMode};
pub use pool::{pool2d, PoolKind};
pub use softmax::softmax_axis;

use crate::error::{Error, Result};

pub(crate) fn expect_ndim(
    op: &'static str,
    name: &str,
    shape: &[usize],
    ndim: usize,
) -> Result<()> {
    if shape.len() != ndim {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("{name} must be {ndim}-d, got shape {shape:?}"),
        });
    }
    Ok(())
}
