//! Pointwise and layout ops: relu, add, mul, scalar scale, reshape, narrow,
//! channel concat, per-channel broadcast multiply, and the sum reduction
//! used to form scalar losses.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

use super::expect_ndim;

impl<E: Element> Tensor<E> {
    /// max(x, 0). The subgradient at exactly 0 is taken as 0.
    pub fn relu(&self) -> Tensor<E> {
        let x = self.clone();
        let data: Vec<E> =
            self.data().iter().map(|&v| if v > E::ZERO { v } else { E::ZERO }).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            "relu",
            vec![self.clone()],
            move |g, _out| {
                let xd = x.data();
                let gx = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(&gi, &xi)| if xi > E::ZERO { gi } else { E::ZERO })
                    .collect();
                vec![Some(gx)]
            },
        )
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            });
        }
        let data: Vec<E> =
            self.data().iter().zip(rhs.data().iter()).map(|(&a, &b)| a + b).collect();
        let (na, nb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "add",
            vec![self.clone(), rhs.clone()],
            move |g, _out| {
                vec![
                    na.then(|| g.to_vec()),
                    nb.then(|| g.to_vec()),
                ]
            },
        ))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            });
        }
        let data: Vec<E> =
            self.data().iter().zip(rhs.data().iter()).map(|(&a, &b)| a * b).collect();
        let (a, b) = (self.clone(), rhs.clone());
        let (na, nb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "mul",
            vec![self.clone(), rhs.clone()],
            move |g, _out| {
                let ga = na.then(|| {
                    g.iter().zip(b.data().iter()).map(|(&gi, &bi)| gi * bi).collect()
                });
                let gb = nb.then(|| {
                    g.iter().zip(a.data().iter()).map(|(&gi, &ai)| gi * ai).collect()
                });
                vec![ga, gb]
            },
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: E) -> Tensor<E> {
        let data: Vec<E> = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            "scale",
            vec![self.clone()],
            move |g, _out| vec![Some(g.iter().map(|&gi| gi * c).collect())],
        )
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&self) -> Tensor<E> {
        let mut acc = E::ZERO;
        for &v in self.data().iter() {
            acc += v;
        }
        let n = self.len();
        Tensor::from_op(vec![], vec![acc], "sum_all", vec![self.clone()], move |g, _out| {
            vec![Some(vec![g[0]; n])]
        })
    }

    /// Same data, new extents. The element count must be preserved.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        if numel(shape) != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!(
                    "cannot view {:?} ({} elements) as {:?} ({} elements)",
                    self.shape(),
                    self.len(),
                    shape,
                    numel(shape)
                ),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            move |g, _out| vec![Some(g.to_vec())],
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "narrow",
                detail: format!(
                    "range {start}..{} out of bounds for axis {axis} of {shape:?}",
                    start + len
                ),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;

        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);

        let total = self.len();
        Ok(Tensor::from_op(
            out_shape,
            data,
            "narrow",
            vec![self.clone()],
            move |g, _out| {
                let mut gx = vec![E::ZERO; total];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let srcb = o * len * inner;
                    gx[dst..dst + len * inner]
                        .copy_from_slice(&g[srcb..srcb + len * inner]);
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Broadcast multiply of an NCHW tensor by per-sample per-channel
    /// weights of shape (N, C, 1, 1).
    pub fn scale_channels(&self, weights: &Tensor<E>) -> Result<Tensor<E>> {
        expect_ndim("scale_channels", "input", self.shape(), 4)?;
        let (n, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        if weights.shape() != [n, c, 1, 1] {
            return Err(Error::ShapeMismatch {
                op: "scale_channels",
                detail: format!(
                    "weights {:?} do not match input (N, C, 1, 1) = ({n}, {c}, 1, 1)",
                    weights.shape()
                ),
            });
        }
        let hw = h * w;
        let xd = self.data();
        let wd = weights.data();
        let mut data = vec![E::ZERO; n * c * hw];
        for nc in 0..n * c {
            let s = wd[nc];
            let src = &xd[nc * hw..(nc + 1) * hw];
            let dst = &mut data[nc * hw..(nc + 1) * hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v * s;
            }
        }
        drop(xd);
        drop(wd);

        let (x, wt) = (self.clone(), weights.clone());
        let (nx, nw) = (self.requires_grad(), weights.requires_grad());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "scale_channels",
            vec![self.clone(), weights.clone()],
            move |g, _out| {
                let gx = nx.then(|| {
                    let wd = wt.data();
                    let mut gx = vec![E::ZERO; g.len()];
                    for nc in 0..n * c {
                        let s = wd[nc];
                        for i in 0..hw {
                            gx[nc * hw + i] = g[nc * hw + i] * s;
                        }
                    }
                    gx
                });
                let gw = nw.then(|| {
                    let xd = x.data();
                    let mut gw = vec![E::ZERO; n * c];
                    for nc in 0..n * c {
                        let mut acc = E::ZERO;
                        for i in 0..hw {
                            acc += g[nc * hw + i] * xd[nc * hw + i];
                        }
                        gw[nc] = acc;
                    }
                    gw
                });
                vec![gx, gw]
            },
        ))
    }
}

/// Concatenate two NCHW tensors along the channel axis. Batch and spatial
/// extents must match.
pub fn concat_channels<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    expect_ndim("concat_channels", "lhs", a.shape(), 4)?;
    expect_ndim("concat_channels", "rhs", b.shape(), 4)?;
    let (n, ca, h, w) = (a.dim(0), a.dim(1), a.dim(2), a.dim(3));
    let cb = b.dim(1);
    if b.dim(0) != n || b.dim(2) != h || b.dim(3) != w {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let hw = h * w;
    let ad = a.data();
    let bd = b.data();
    let mut data = Vec::with_capacity(n * (ca + cb) * hw);
    for i in 0..n {
        data.extend_from_slice(&ad[i * ca * hw..(i + 1) * ca * hw]);
        data.extend_from_slice(&bd[i * cb * hw..(i + 1) * cb * hw]);
    }
    drop(ad);
    drop(bd);

    let (na, nb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        vec![n, ca + cb, h, w],
        data,
        "concat_channels",
        vec![a.clone(), b.clone()],
        move |g, _out| {
            let stride = (ca + cb) * hw;
            let ga = na.then(|| {
                let mut ga = Vec::with_capacity(n * ca * hw);
                for i in 0..n {
                    ga.extend_from_slice(&g[i * stride..i * stride + ca * hw]);
                }
                ga
            });
            let gb = nb.then(|| {
                let mut gb = Vec::with_capacity(n * cb * hw);
                for i in 0..n {
                    gb.extend_from_slice(&g[i * stride + ca * hw..(i + 1) * stride]);
                }
                gb
            });
            vec![ga, gb]
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
    fn relu_clamps_and_gates_gradient() {
        let x = t(&[4], vec![-1.0, 0.0, 2.0, -3.0]).with_grad();
        let y = x.relu();
        assert_eq!(y.to_vec(), vec![0.0, 0.0, 2.0, 0.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn add_requires_matching_shapes() {
        let a = t(&[2], vec![1.0, 2.0]);
        let b = t(&[3], vec![1.0, 2.0, 3.0]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn repeated_use_accumulates_gradient() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let x = t(&[2], vec![3.0, -2.0]).with_grad();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0, -3.0]);
    }

    #[test]
    fn grad_accumulates_across_backward_calls() {
        let x = t(&[1], vec![2.0]).with_grad();
        let y = x.scale(3.0).sum_all();
        y.backward().unwrap();
        let z = x.scale(3.0).sum_all();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn narrow_extracts_middle_slice() {
        // shape (2,3): rows [1,2,3], [4,5,6]; narrow axis 1 -> col 1..3
        let x = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad();
        let y = x.narrow(1, 1, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.to_vec(), vec![2.0, 3.0, 5.0, 6.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_channels_roundtrips_with_narrow() {
        let a = t(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = t(&[1, 1, 1, 2], vec![5.0, 6.0]);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), &[1, 3, 1, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let back = y.narrow(1, 2, 1).unwrap();
        assert_eq!(back.to_vec(), vec![5.0, 6.0]);
    }

    #[test]
    fn scale_channels_broadcasts_per_channel() {
        let x = t(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).with_grad();
        let w = t(&[1, 2, 1, 1], vec![10.0, 0.5]).with_grad();
        let y = x.scale_channels(&w).unwrap();
        assert_eq!(y.to_vec(), vec![10.0, 20.0, 1.5, 2.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![10.0, 10.0, 0.5, 0.5]);
        assert_eq!(w.grad().unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn reshape_preserves_data_and_routes_gradient() {
        let x = t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).with_grad();
        let y = x.reshape(&[4]).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(x.reshape(&[3]).is_err());
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }
}
