//! Batch normalization over NCHW inputs: per-channel statistics across
//! batch and spatial axes. Train mode normalizes by batch statistics
//! (biased variance) and folds them into the running estimates; eval mode
//! normalizes by the running estimates alone. The backward pass in train
//! mode differentiates through the batch statistics.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::expect_ndim;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Normalize `x` (N, C, H, W) with per-channel affine parameters `gamma`
/// and `beta` of shape (C,).
///
/// In `Train` mode the running buffers are updated in place as
/// `running = (1 - momentum) * running + momentum * batch_stat`, with the
/// biased (population) variance. In `Eval` mode they are read only.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &mut [E],
    running_var: &mut [E],
    mode: BnMode,
    momentum: E,
    eps: E,
) -> Result<Tensor<E>> {
    expect_ndim("batch_norm2d", "input", x.shape(), 4)?;
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "batch_norm2d",
            detail: format!(
                "gamma {:?} / beta {:?} must both be [{c}]",
                gamma.shape(),
                beta.shape()
            ),
        });
    }
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::ShapeMismatch {
            op: "batch_norm2d",
            detail: format!(
                "running stats of length {}/{} must both be {c}",
                running_mean.len(),
                running_var.len()
            ),
        });
    }
    let hw = h * w;
    let m = n * hw;
    if m == 0 {
        return Err(Error::EmptyReduction("batch_norm2d"));
    }

    // Statistics used for normalization this call.
    let (mean, var) = match mode {
        BnMode::Train => {
            let xd = x.data();
            let inv_m = E::from_f64(1.0 / m as f64);
            let mut mean = vec![E::ZERO; c];
            let mut var = vec![E::ZERO; c];
            for ch in 0..c {
                let mut acc = E::ZERO;
                for i in 0..n {
                    for &v in &xd[(i * c + ch) * hw..][..hw] {
                        acc += v;
                    }
                }
                mean[ch] = acc * inv_m;
            }
            for ch in 0..c {
                let mu = mean[ch];
                let mut acc = E::ZERO;
                for i in 0..n {
                    for &v in &xd[(i * c + ch) * hw..][..hw] {
                        let d = v - mu;
                        acc += d * d;
                    }
                }
                var[ch] = acc * inv_m;
            }
            for ch in 0..c {
                running_mean[ch] = (E::ONE - momentum) * running_mean[ch] + momentum * mean[ch];
                running_var[ch] = (E::ONE - momentum) * running_var[ch] + momentum * var[ch];
            }
            (mean, var)
        }
        BnMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };

    let inv_std: Vec<E> = var.iter().map(|&v| E::ONE / (v + eps).sqrt()).collect();

    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![E::ZERO; n * c * hw];
    for i in 0..n {
        for ch in 0..c {
            let (mu, istd, ga, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
            let src = &xd[(i * c + ch) * hw..][..hw];
            let dst = &mut out[(i * c + ch) * hw..][..hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mu) * istd * ga + be;
            }
        }
    }
    drop(xd);
    drop(gd);
    drop(bd);

    let (xc, gc) = (x.clone(), gamma.clone());
    let (need_x, need_g, need_b) =
        (x.requires_grad(), gamma.requires_grad(), beta.requires_grad());
    let train = mode == BnMode::Train;
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        "batch_norm2d",
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |gout, _out| {
            let xd = xc.data();
            let gd = gc.data();
            let inv_m = E::from_f64(1.0 / m as f64);
            let mut gx = need_x.then(|| vec![E::ZERO; n * c * hw]);
            let mut gg = need_g.then(|| vec![E::ZERO; c]);
            let mut gb = need_b.then(|| vec![E::ZERO; c]);
            for ch in 0..c {
                let (mu, istd) = (mean[ch], inv_std[ch]);
                // sum_dy and sum_dy_xhat drive both the affine grads and the
                // train-mode correction terms.
                let mut sum_dy = E::ZERO;
                let mut sum_dy_xhat = E::ZERO;
                for i in 0..n {
                    let base = (i * c + ch) * hw;
                    for s in 0..hw {
                        let dy = gout[base + s];
                        let xhat = (xd[base + s] - mu) * istd;
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat;
                    }
                }
                if let Some(gg) = gg.as_mut() {
                    gg[ch] = sum_dy_xhat;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ch] = sum_dy;
                }
                if let Some(gx) = gx.as_mut() {
                    let ga = gd[ch];
                    if train {
                        for i in 0..n {
                            let base = (i * c + ch) * hw;
                            for s in 0..hw {
                                let dy = gout[base + s];
                                let xhat = (xd[base + s] - mu) * istd;
                                gx[base + s] = ga
                                    * istd
                                    * (dy - inv_m * (sum_dy + xhat * sum_dy_xhat));
                            }
                        }
                    } else {
                        let coef = ga * istd;
                        for i in 0..n {
                            let base = (i * c + ch) * hw;
                            for s in 0..hw {
                                gx[base + s] = gout[base + s] * coef;
                            }
                        }
                    }
                }
            }
            vec![gx, gg, gb]
        },
    ))
}
