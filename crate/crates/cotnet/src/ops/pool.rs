//! Spatial pooling over NCHW inputs: max, average, and global average.
//!
//! Padding semantics: max pooling ignores padded positions (they never win
//! the max), average pooling treats them as zeros and always divides by
//! k*k. A max window with no valid taps is an error.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::conv::conv_out_extent;
use super::expect_ndim;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    /// Average over the full spatial extent; `k`, `stride` and `padding`
    /// are ignored and the output is (N, C, 1, 1).
    GlobalAvg,
}

/// Pool `x` (N, C, H, W) with a k x k window. For `GlobalAvg` the window
/// arguments are ignored.
pub fn pool2d<E: Element>(
    x: &Tensor<E>,
    kind: PoolKind,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    expect_ndim("pool2d", "input", x.shape(), 4)?;
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    match kind {
        PoolKind::GlobalAvg => global_avg(x, n, c, h, w),
        PoolKind::Max | PoolKind::Avg => {
            if stride == 0 {
                return Err(Error::InvalidConfig("pool2d stride must be >= 1".into()));
            }
            if padding >= k {
                return Err(Error::InvalidConfig(format!(
                    "pool2d padding {padding} must be smaller than window {k}"
                )));
            }
            let ho = conv_out_extent(h, k, padding, stride)?;
            let wo = conv_out_extent(w, k, padding, stride)?;
            if kind == PoolKind::Max {
                max_pool(x, n, c, h, w, k, stride, padding, ho, wo)
            } else {
                avg_pool(x, n, c, h, w, k, stride, padding, ho, wo)
            }
        }
    }
}

fn global_avg<E: Element>(
    x: &Tensor<E>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<E>> {
    let hw = h * w;
    if hw == 0 {
        return Err(Error::EmptyReduction("global average pool"));
    }
    let inv = E::from_f64(1.0 / hw as f64);
    let xd = x.data();
    let mut out = vec![E::ZERO; n * c];
    for (nc, o) in out.iter_mut().enumerate() {
        let mut acc = E::ZERO;
        for &v in &xd[nc * hw..(nc + 1) * hw] {
            acc += v;
        }
        *o = acc * inv;
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![n, c, 1, 1],
        out,
        "global_avg_pool",
        vec![x.clone()],
        move |g, _out| {
            let mut gx = vec![E::ZERO; n * c * hw];
            for nc in 0..n * c {
                let gv = g[nc] * inv;
                gx[nc * hw..(nc + 1) * hw].fill(gv);
            }
            vec![Some(gx)]
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn max_pool<E: Element>(
    x: &Tensor<E>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Result<Tensor<E>> {
    let hw = h * w;
    let l = ho * wo;
    let xd = x.data();
    let mut out = vec![E::ZERO; n * c * l];
    // Winning input index per output element; ties go to scan order
    // (top-left first), which fixes the backward routing deterministically.
    let mut argmax = vec![0usize; n * c * l];
    for nc in 0..n * c {
        let plane = &xd[nc * hw..(nc + 1) * hw];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best: Option<(E, usize)> = None;
                for ki in 0..k {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..k {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        let v = plane[idx];
                        if best.map_or(true, |(bv, _)| v > bv) {
                            best = Some((v, idx));
                        }
                    }
                }
                let (v, idx) =
                    best.ok_or(Error::EmptyReduction("max pool window"))?;
                out[nc * l + oy * wo + ox] = v;
                argmax[nc * l + oy * wo + ox] = idx;
            }
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        "max_pool2d",
        vec![x.clone()],
        move |g, _out| {
            let mut gx = vec![E::ZERO; n * c * hw];
            for nc in 0..n * c {
                for s in 0..l {
                    gx[nc * hw + argmax[nc * l + s]] += g[nc * l + s];
                }
            }
            vec![Some(gx)]
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn avg_pool<E: Element>(
    x: &Tensor<E>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Result<Tensor<E>> {
    let hw = h * w;
    let l = ho * wo;
    let inv = E::from_f64(1.0 / (k * k) as f64);
    let xd = x.data();
    let mut out = vec![E::ZERO; n * c * l];
    for nc in 0..n * c {
        let plane = &xd[nc * hw..(nc + 1) * hw];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = E::ZERO;
                for ki in 0..k {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..k {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            acc += plane[iy as usize * w + ix as usize];
                        }
                    }
                }
                out[nc * l + oy * wo + ox] = acc * inv;
            }
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        "avg_pool2d",
        vec![x.clone()],
        move |g, _out| {
            let mut gx = vec![E::ZERO; n * c * hw];
            for nc in 0..n * c {
                let plane = &mut gx[nc * hw..(nc + 1) * hw];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gv = g[nc * l + oy * wo + ox] * inv;
                        for ki in 0..k {
                            let iy = (oy * stride + ki) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let ix = (ox * stride + kj) as isize - padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    plane[iy as usize * w + ix as usize] += gv;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let x = t(&[1, 1, 2, 4], vec![1.0, 3.0, 2.0, 8.0, 5.0, 0.0, -1.0, 4.0]);
        let y = pool2d(&x, PoolKind::Max, 2, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.to_vec(), vec![5.0, 8.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_winner_only() {
        let x = t(&[1, 1, 2, 2], vec![1.0, 7.0, 3.0, 2.0]).with_grad();
        let y = pool2d(&x, PoolKind::Max, 2, 1, 0).unwrap();
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn stem_style_padded_max_pool_halves_extent() {
        let x = Tensor::<f64>::zeros(&[1, 1, 112, 112]);
        let y = pool2d(&x, PoolKind::Max, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 56, 56]);
    }

    #[test]
    fn avg_pool_divides_by_window_area() {
        let x = t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = pool2d(&x, PoolKind::Avg, 2, 2, 0).unwrap();
        assert_eq!(y.to_vec(), vec![2.5]);
    }

    #[test]
    fn global_avg_reduces_to_unit_spatial() {
        let x = t(&[1, 2, 1, 2], vec![1.0, 3.0, 10.0, 30.0]).with_grad();
        let y = pool2d(&x, PoolKind::GlobalAvg, 0, 0, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.to_vec(), vec![2.0, 20.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn rejects_padding_at_least_window() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!(pool2d(&x, PoolKind::Max, 2, 2, 2).is_err());
    }
}
