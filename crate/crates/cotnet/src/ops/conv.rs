//! 2-d convolution (cross-correlation) with stride, zero padding, groups,
//! and optional bias. Forward lowers each (sample, group) to an im2col
//! matrix and runs a cache-friendly matmul; backward reuses the same
//! lowering for the weight and input gradients.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::expect_ndim;

/// Stride/padding/groups bundle. Padding is symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dArgs {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dArgs {
    fn default() -> Self {
        Conv2dArgs { stride: 1, padding: 0, groups: 1 }
    }
}

/// Output extent along one spatial axis, or an error when the kernel does
/// not fit into the padded input.
pub(crate) fn conv_out_extent(
    input: usize,
    kernel: usize,
    padding: usize,
    stride: usize,
) -> Result<usize> {
    let span = input + 2 * padding;
    if kernel == 0 || span < kernel {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "kernel {kernel} exceeds padded input extent {span} (input {input}, padding {padding})"
            ),
        });
    }
    Ok((span - kernel) / stride + 1)
}

/// C = A·B with A (m × k) and B (k × n), accumulating into `c` (must be
/// zero-initialized). The i-k-j loop order keeps both B rows and C rows
/// streaming, which autovectorizes well.
pub(crate) fn matmul_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Lower one (cin_g, h, w) image slice into a (cin_g·k·k) × (ho·wo) patch
/// matrix. Out-of-range taps are zeros. Every output element is written.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    src: &[E],
    h: usize,
    w: usize,
    cin_g: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [E],
) {
    let l = ho * wo;
    for c in 0..cin_g {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * l..(row + 1) * l];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(E::ZERO);
                        continue;
                    }
                    let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // Valid ox range is a single contiguous run.
                        let ix0 = kj as isize - pad as isize;
                        let lo = (-ix0).max(0) as usize;
                        let hi = ((w as isize - ix0).max(0) as usize).min(wo);
                        drow[..lo.min(wo)].fill(E::ZERO);
                        if lo < hi {
                            drow[lo..hi].copy_from_slice(
                                &srow[(ix0 + lo as isize) as usize..(ix0 + hi as isize) as usize],
                            );
                        }
                        drow[hi.max(lo).min(wo)..].fill(E::ZERO);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                E::ZERO
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch-matrix gradient back onto the input image slice
/// (exact adjoint of [`im2col`]).
#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Element>(
    gcol: &[E],
    h: usize,
    w: usize,
    cin_g: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dst: &mut [E],
) {
    let l = ho * wo;
    for c in 0..cin_g {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let grow = &gcol[row * l..(row + 1) * l];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            prow[ix as usize] += grow[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    cout_g: usize,
}

fn check_conv(
    x: &[usize],
    wt: &[usize],
    bias: Option<&[usize]>,
    args: Conv2dArgs,
) -> Result<ConvDims> {
    expect_ndim("conv2d", "input", x, 4)?;
    expect_ndim("conv2d", "weight", wt, 4)?;
    let (n, cin, h, w) = (x[0], x[1], x[2], x[3]);
    let (cout, wc, kh, kw) = (wt[0], wt[1], wt[2], wt[3]);
    if kh != kw {
        return Err(Error::InvalidConfig(format!(
            "conv2d kernels must be square, got {kh}x{kw}"
        )));
    }
    if args.stride == 0 {
        return Err(Error::InvalidConfig("conv2d stride must be >= 1".into()));
    }
    if args.groups == 0 || cin % args.groups != 0 || cout % args.groups != 0 {
        return Err(Error::InvalidConfig(format!(
            "conv2d groups {} must divide in channels {cin} and out channels {cout}",
            args.groups
        )));
    }
    let cin_g = cin / args.groups;
    if wc != cin_g {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "weight expects {wc} input channels per group, input provides {cin_g} ({cin} over {} groups)",
                args.groups
            ),
        });
    }
    if let Some(b) = bias {
        if b != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias shape {b:?} must be [{cout}]"),
            });
        }
    }
    let ho = conv_out_extent(h, kh, args.padding, args.stride)?;
    let wo = conv_out_extent(w, kw, args.padding, args.stride)?;
    Ok(ConvDims { n, cin, h, w, cout, k: kh, ho, wo, cin_g, cout_g: cout / args.groups })
}

/// Strided, grouped 2-d convolution of an NCHW input with an
/// (out, in/groups, k, k) weight and optional (out,) bias.
pub fn conv2d<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    args: Conv2dArgs,
) -> Result<Tensor<E>> {
    let d = check_conv(x.shape(), weight.shape(), bias.map(|b| b.shape()), args)?;
    let kk = d.cin_g * d.k * d.k;
    let l = d.ho * d.wo;
    let direct = d.k == 1 && args.stride == 1 && args.padding == 0;

    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![E::ZERO; d.n * d.cout * l];
    let mut col = if direct { Vec::new() } else { vec![E::ZERO; kk * l] };
    for i in 0..d.n {
        for g in 0..args.groups {
            let src = &xd[(i * d.cin + g * d.cin_g) * d.h * d.w..][..d.cin_g * d.h * d.w];
            let patches: &[E] = if direct {
                src
            } else {
                im2col(src, d.h, d.w, d.cin_g, d.k, args.stride, args.padding, d.ho, d.wo, &mut col);
                &col
            };
            let a = &wd[g * d.cout_g * kk..(g + 1) * d.cout_g * kk];
            let c = &mut out[(i * d.cout + g * d.cout_g) * l..][..d.cout_g * l];
            matmul_acc(a, patches, c, d.cout_g, kk, l);
        }
    }
    if let Some(b) = bias {
        let bd = b.data();
        for i in 0..d.n {
            for oc in 0..d.cout {
                let bv = bd[oc];
                for v in &mut out[(i * d.cout + oc) * l..][..l] {
                    *v += bv;
                }
            }
        }
    }
    drop(xd);
    drop(wd);

    let mut inputs = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let (xc, wc) = (x.clone(), weight.clone());
    let (need_x, need_w) = (x.requires_grad(), weight.requires_grad());
    let need_b = bias.map(|b| b.requires_grad());
    let (n, cin, h, w, cout, k, ho, wo, cin_g, cout_g) =
        (d.n, d.cin, d.h, d.w, d.cout, d.k, d.ho, d.wo, d.cin_g, d.cout_g);

    Ok(Tensor::from_op(
        vec![n, cout, ho, wo],
        out,
        "conv2d",
        inputs,
        move |gout, _out| {
            let kk = cin_g * k * k;
            let l = ho * wo;
            let xd = xc.data();
            let wd = wc.data();
            let mut gx = need_x.then(|| vec![E::ZERO; n * cin * h * w]);
            let mut gw = need_w.then(|| vec![E::ZERO; cout * kk]);
            let mut col = if direct { Vec::new() } else { vec![E::ZERO; kk * l] };
            let mut gcol = vec![E::ZERO; kk * l];
            for i in 0..n {
                for g in 0..args.groups {
                    let src =
                        &xd[(i * cin + g * cin_g) * h * w..][..cin_g * h * w];
                    let gslice = &gout[(i * cout + g * cout_g) * l..][..cout_g * l];
                    if need_w {
                        let patches: &[E] = if direct {
                            src
                        } else {
                            im2col(src, h, w, cin_g, k, args.stride, args.padding, ho, wo, &mut col);
                            &col
                        };
                        let gw = gw.as_mut().unwrap();
                        for oc in 0..cout_g {
                            let grow = &gslice[oc * l..(oc + 1) * l];
                            let wrow = &mut gw[(g * cout_g + oc) * kk..][..kk];
                            for (p, wv) in wrow.iter_mut().enumerate() {
                                let prow = &patches[p * l..(p + 1) * l];
                                let mut acc = E::ZERO;
                                for (gv, pv) in grow.iter().zip(prow) {
                                    acc += *gv * *pv;
                                }
                                *wv += acc;
                            }
                        }
                    }
                    if need_x {
                        // gcol = W_g' . gout_g, then scatter back to image.
                        let wg = &wd[g * cout_g * kk..(g + 1) * cout_g * kk];
                        for p in 0..kk {
                            let grow = &mut gcol[p * l..(p + 1) * l];
                            grow.fill(E::ZERO);
                            for oc in 0..cout_g {
                                let av = wg[oc * kk + p];
                                let brow = &gslice[oc * l..(oc + 1) * l];
                                for (gv, bv) in grow.iter_mut().zip(brow) {
                                    *gv += av * *bv;
                                }
                            }
                        }
                        let gx = gx.as_mut().unwrap();
                        let dst = &mut gx[(i * cin + g * cin_g) * h * w..][..cin_g * h * w];
                        col2im_add(&gcol, h, w, cin_g, k, args.stride, args.padding, ho, wo, dst);
                    }
                }
            }
            let gb = match need_b {
                Some(true) => {
                    let mut gb = vec![E::ZERO; cout];
                    for i in 0..n {
                        for oc in 0..cout {
                            let mut acc = E::ZERO;
                            for &v in &gout[(i * cout + oc) * l..][..l] {
                                acc += v;
                            }
                            gb[oc] += acc;
                        }
                    }
                    Some(Some(gb))
                }
                Some(false) => Some(None),
                None => None,
            };
            let mut grads = vec![gx, gw];
            if let Some(gb) = gb {
                grads.push(gb);
            }
            grads
        },
    ))
}
