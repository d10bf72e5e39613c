//! Local self-attention over k x k neighborhoods.
//!
//! Every spatial position attends to the k*k grid centered on it (odd k).
//! Channels are split into `heads` groups of d = C/heads; each head forms
//! its own attention distribution, shared across the head's d channels.
//!
//! Relation tensors use layout (N, H, W, k*k, heads), with offset index
//! o = dy * k + dx encoding displacement (dy - r, dx - r) for r = (k-1)/2.
//! Taps that fall outside the image act as zeros (zero padding), both in
//! relation construction and in aggregation.

use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::init::{conv_weight, randn};
use crate::ops::{conv2d, expect_ndim, softmax_axis, Conv2dArgs};
use crate::tensor::Tensor;

/// Relation tensors are plain tensors with the documented
/// (N, H, W, k*k, heads) layout; the alias marks intent in signatures.
pub type RelationMap<E> = Tensor<E>;

/// Geometry of a local attention unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LsaConfig {
    pub channels: usize,
    /// Neighborhood extent; must be odd so the window centers on the query.
    pub kernel: usize,
    pub heads: usize,
}

impl LsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 {
            return Err(Error::InvalidConfig(
                "local attention needs non-zero channels and heads".into(),
            ));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "local attention kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.channels % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "heads {} must divide channels {}",
                self.heads, self.channels
            )));
        }
        Ok(())
    }

    /// Channels per head.
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

fn check_nchw<E: Element>(
    op: &'static str,
    x: &Tensor<E>,
    channels: usize,
) -> Result<(usize, usize, usize)> {
    expect_ndim(op, "input", x.shape(), 4)?;
    if x.dim(1) != channels {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("expected {channels} channels, got {}", x.dim(1)),
        });
    }
    Ok((x.dim(0), x.dim(2), x.dim(3)))
}

fn check_relation<E: Element>(
    op: &'static str,
    rel: &Tensor<E>,
    n: usize,
    h: usize,
    w: usize,
    k: usize,
    heads: usize,
) -> Result<()> {
    if rel.shape() != [n, h, w, k * k, heads] {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!(
                "relation {:?} does not match (N, H, W, k*k, heads) = ({n}, {h}, {w}, {}, {heads})",
                rel.shape(),
                k * k
            ),
        });
    }
    Ok(())
}

/// Pairwise content relation: for each position, the dot product between
/// its query fiber and the key fiber at every neighborhood offset, per
/// head. `key` and `query` are NCHW with identical shapes.
pub fn local_matmul<E: Element>(
    key: &Tensor<E>,
    query: &Tensor<E>,
    kernel: usize,
    heads: usize,
) -> Result<RelationMap<E>> {
    let cfg = LsaConfig { channels: query.dim(1), kernel, heads };
    cfg.validate()?;
    if key.shape() != query.shape() {
        return Err(Error::ShapeMismatch {
            op: "local_matmul",
            detail: format!("key {:?} vs query {:?}", key.shape(), query.shape()),
        });
    }
    let (n, h, w) = check_nchw("local_matmul", query, cfg.channels)?;
    let (c, d, k, k2) = (cfg.channels, cfg.head_dim(), kernel, kernel * kernel);
    let r = (k / 2) as isize;
    let hw = h * w;

    let kd = key.data();
    let qd = query.data();
    let mut out = vec![E::ZERO; n * hw * k2 * heads];
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let ob = ((ni * h + y) * w + x) * k2 * heads;
                for o in 0..k2 {
                    let iy = y as isize + (o / k) as isize - r;
                    let ix = x as isize + (o % k) as isize - r;
                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                        continue; // zero padding: leave the dot at 0
                    }
                    let (iy, ix) = (iy as usize, ix as usize);
                    for hh in 0..heads {
                        let mut acc = E::ZERO;
                        for j in 0..d {
                            let ch = hh * d + j;
                            acc += qd[(ni * c + ch) * hw + y * w + x]
                                * kd[(ni * c + ch) * hw + iy * w + ix];
                        }
                        out[ob + o * heads + hh] = acc;
                    }
                }
            }
        }
    }
    drop(kd);
    drop(qd);

    let (kc, qc) = (key.clone(), query.clone());
    let (need_k, need_q) = (key.requires_grad(), query.requires_grad());
    Ok(Tensor::from_op(
        vec![n, h, w, k2, heads],
        out,
        "local_matmul",
        vec![key.clone(), query.clone()],
        move |g, _out| {
            let kd = kc.data();
            let qd = qc.data();
            let mut gk = need_k.then(|| vec![E::ZERO; n * c * hw]);
            let mut gq = need_q.then(|| vec![E::ZERO; n * c * hw]);
            for ni in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let ob = ((ni * h + y) * w + x) * k2 * heads;
                        for o in 0..k2 {
                            let iy = y as isize + (o / k) as isize - r;
                            let ix = x as isize + (o % k) as isize - r;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            for hh in 0..heads {
                                let gv = g[ob + o * heads + hh];
                                for j in 0..d {
                                    let ch = (ni * c + hh * d + j) * hw;
                                    let qi = ch + y * w + x;
                                    let ki = ch + iy * w + ix;
                                    if let Some(gk) = gk.as_mut() {
                                        gk[ki] += gv * qd[qi];
                                    }
                                    if let Some(gq) = gq.as_mut() {
                                        gq[qi] += gv * kd[ki];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![gk, gq]
        },
    ))
}

/// Relative position term: the dot product between each query fiber and a
/// learned embedding per offset, shared across heads. `pos` has shape
/// (k, k, d) with d = channels / heads.
pub fn position_bias<E: Element>(
    query: &Tensor<E>,
    pos: &Tensor<E>,
    kernel: usize,
    heads: usize,
) -> Result<RelationMap<E>> {
    let cfg = LsaConfig { channels: query.dim(1), kernel, heads };
    cfg.validate()?;
    let (n, h, w) = check_nchw("position_bias", query, cfg.channels)?;
    let (c, d, k2) = (cfg.channels, cfg.head_dim(), kernel * kernel);
    if pos.shape() != [kernel, kernel, d] {
        return Err(Error::ShapeMismatch {
            op: "position_bias",
            detail: format!(
                "position embedding {:?} must be ({kernel}, {kernel}, {d})",
                pos.shape()
            ),
        });
    }
    let hw = h * w;

    let qd = query.data();
    let pd = pos.data();
    let mut out = vec![E::ZERO; n * hw * k2 * heads];
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let ob = ((ni * h + y) * w + x) * k2 * heads;
                for o in 0..k2 {
                    for hh in 0..heads {
                        let mut acc = E::ZERO;
                        for j in 0..d {
                            acc += qd[(ni * c + hh * d + j) * hw + y * w + x]
                                * pd[o * d + j];
                        }
                        out[ob + o * heads + hh] = acc;
                    }
                }
            }
        }
    }
    drop(qd);
    drop(pd);

    let (qc, pc) = (query.clone(), pos.clone());
    let (need_q, need_p) = (query.requires_grad(), pos.requires_grad());
    Ok(Tensor::from_op(
        vec![n, h, w, k2, heads],
        out,
        "position_bias",
        vec![query.clone(), pos.clone()],
        move |g, _out| {
            let qd = qc.data();
            let pd = pc.data();
            let mut gq = need_q.then(|| vec![E::ZERO; n * c * hw]);
            let mut gp = need_p.then(|| vec![E::ZERO; k2 * d]);
            for ni in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let ob = ((ni * h + y) * w + x) * k2 * heads;
                        for o in 0..k2 {
                            for hh in 0..heads {
                                let gv = g[ob + o * heads + hh];
                                for j in 0..d {
                                    let qi = (ni * c + hh * d + j) * hw + y * w + x;
                                    if let Some(gq) = gq.as_mut() {
                                        gq[qi] += gv * pd[o * d + j];
                                    }
                                    if let Some(gp) = gp.as_mut() {
                                        gp[o * d + j] += gv * qd[qi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![gq, gp]
        },
    ))
}

/// Weighted local gather: each output channel mixes its own value channel
/// over the k x k neighborhood using the relation weights of the channel's
/// head. Out-of-image value taps contribute zero.
pub fn aggregate<E: Element>(
    value: &Tensor<E>,
    relation: &RelationMap<E>,
    kernel: usize,
    heads: usize,
) -> Result<Tensor<E>> {
    let cfg = LsaConfig { channels: value.dim(1), kernel, heads };
    cfg.validate()?;
    let (n, h, w) = check_nchw("aggregate", value, cfg.channels)?;
    check_relation("aggregate", relation, n, h, w, kernel, heads)?;
    let (c, d, k, k2) = (cfg.channels, cfg.head_dim(), kernel, kernel * kernel);
    let r = (k / 2) as isize;
    let hw = h * w;

    let vd = value.data();
    let rd = relation.data();
    let mut out = vec![E::ZERO; n * c * hw];
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let rb = ((ni * h + y) * w + x) * k2 * heads;
                for o in 0..k2 {
                    let iy = y as isize + (o / k) as isize - r;
                    let ix = x as isize + (o % k) as isize - r;
                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let (iy, ix) = (iy as usize, ix as usize);
                    for hh in 0..heads {
                        let a = rd[rb + o * heads + hh];
                        for j in 0..d {
                            let ch = ni * c + hh * d + j;
                            out[ch * hw + y * w + x] += a * vd[ch * hw + iy * w + ix];
                        }
                    }
                }
            }
        }
    }
    drop(vd);
    drop(rd);

    let (vc, rc) = (value.clone(), relation.clone());
    let (need_v, need_r) = (value.requires_grad(), relation.requires_grad());
    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out,
        "aggregate",
        vec![value.clone(), relation.clone()],
        move |g, _out| {
            let vd = vc.data();
            let rd = rc.data();
            let mut gv = need_v.then(|| vec![E::ZERO; n * c * hw]);
            let mut gr = need_r.then(|| vec![E::ZERO; n * hw * k2 * heads]);
            for ni in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let rb = ((ni * h + y) * w + x) * k2 * heads;
                        for o in 0..k2 {
                            let iy = y as isize + (o / k) as isize - r;
                            let ix = x as isize + (o % k) as isize - r;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            for hh in 0..heads {
                                let a = rd[rb + o * heads + hh];
                                let mut acc = E::ZERO;
                                for j in 0..d {
                                    let ch = ni * c + hh * d + j;
                                    let go = g[ch * hw + y * w + x];
                                    if let Some(gv) = gv.as_mut() {
                                        gv[ch * hw + iy * w + ix] += a * go;
                                    }
                                    acc += go * vd[ch * hw + iy * w + ix];
                                }
                                if let Some(gr) = gr.as_mut() {
                                    gr[rb + o * heads + hh] += acc;
                                }
                            }
                        }
                    }
                }
            }
            vec![gv, gr]
        },
    ))
}

/// Reorder channel-packed attention logits (N, k*k*heads, H, W) into the
/// relation layout (N, H, W, k*k, heads). Channel index c maps to
/// (offset, head) = (c / heads, c % heads).
pub fn to_relation<E: Element>(
    x: &Tensor<E>,
    kernel: usize,
    heads: usize,
) -> Result<RelationMap<E>> {
    expect_ndim("to_relation", "input", x.shape(), 4)?;
    let k2 = kernel * kernel;
    if x.dim(1) != k2 * heads {
        return Err(Error::ShapeMismatch {
            op: "to_relation",
            detail: format!(
                "expected {} channels (k*k = {k2} times heads = {heads}), got {}",
                k2 * heads,
                x.dim(1)
            ),
        });
    }
    let (n, h, w) = (x.dim(0), x.dim(2), x.dim(3));
    let hw = h * w;
    let c = k2 * heads;

    let xd = x.data();
    let mut out = vec![E::ZERO; n * hw * c];
    for ni in 0..n {
        for ch in 0..c {
            let plane = &xd[(ni * c + ch) * hw..][..hw];
            for (s, &v) in plane.iter().enumerate() {
                out[(ni * hw + s) * c + ch] = v;
            }
        }
    }
    drop(xd);

    Ok(Tensor::from_op(
        vec![n, h, w, k2, heads],
        out,
        "to_relation",
        vec![x.clone()],
        move |g, _out| {
            let mut gx = vec![E::ZERO; n * c * hw];
            for ni in 0..n {
                for ch in 0..c {
                    let plane = &mut gx[(ni * c + ch) * hw..][..hw];
                    for (s, p) in plane.iter_mut().enumerate() {
                        *p = g[(ni * hw + s) * c + ch];
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}

/// Weights of a standalone local self-attention block: 1x1 projections for
/// query/key/value plus the shared position embedding.
pub struct LsaBlock<E: Element> {
    pub config: LsaConfig,
    pub query: Tensor<E>,
    pub key: Tensor<E>,
    pub value: Tensor<E>,
    pub pos: Tensor<E>,
}

impl<E: Element> LsaBlock<E> {
    pub fn new(config: LsaConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        Ok(LsaBlock {
            config,
            query: conv_weight::<E>(c, c, 1, rng).with_grad(),
            key: conv_weight::<E>(c, c, 1, rng).with_grad(),
            value: conv_weight::<E>(c, c, 1, rng).with_grad(),
            pos: randn::<E>(&[config.kernel, config.kernel, config.head_dim()], 0.02, rng)
                .with_grad(),
        })
    }

    /// Content + position relation, softmax over the k*k offsets, then
    /// shared aggregation of the values.
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let cfg = &self.config;
        check_nchw("lsa_forward", x, cfg.channels)?;
        let args = Conv2dArgs::default();
        let q = conv2d(x, &self.query, None, args)?;
        let k = conv2d(x, &self.key, None, args)?;
        let v = conv2d(x, &self.value, None, args)?;
        let content = local_matmul(&k, &q, cfg.kernel, cfg.heads)?;
        let position = position_bias(&q, &self.pos, cfg.kernel, cfg.heads)?;
        let logits = content.add(&position)?;
        let attn = softmax_axis(&logits, 3)?;
        aggregate(&v, &attn, cfg.kernel, cfg.heads)
    }

    pub fn parameters(&self) -> Vec<(&'static str, Tensor<E>)> {
        vec![
            ("query.weight", self.query.clone()),
            ("key.weight", self.key.clone()),
            ("value.weight", self.value.clone()),
            ("pos", self.pos.clone()),
        ]
    }
}
