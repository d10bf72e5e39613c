//! Numerically stabilized softmax along one axis of an arbitrary-rank
//! tensor: exponentials are taken after subtracting the running maximum of
//! each fiber, so finite inputs always produce finite outputs.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Softmax over `axis`, leaving all other axes untouched. Every fiber along
/// `axis` sums to 1.
pub fn softmax_axis<E: Element>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_axis",
            detail: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let len = shape[axis];
    if len == 0 {
        return Err(Error::EmptyReduction("softmax_axis"));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();

    let xd = x.data();
    let mut out = vec![E::ZERO; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = xd[base];
            for j in 1..len {
                let v = xd[base + j * inner];
                if v > max {
                    max = v;
                }
            }
            let mut sum = E::ZERO;
            for j in 0..len {
                let e = (xd[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                sum += e;
            }
            let inv = E::ONE / sum;
            for j in 0..len {
                out[base + j * inner] *= inv;
            }
        }
    }
    drop(xd);

    Ok(Tensor::from_op(
        shape.to_vec(),
        out,
        "softmax_axis",
        vec![x.clone()],
        move |g, y| {
            // dx = y * (g - sum_j g_j y_j) along each fiber.
            let mut gx = vec![E::ZERO; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = E::ZERO;
                    for j in 0..len {
                        let idx = base + j * inner;
                        dot += g[idx] * y[idx];
                    }
                    for j in 0..len {
                        let idx = base + j * inner;
                        gx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}
