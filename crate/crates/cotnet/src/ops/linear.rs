//! Fully connected layer: y = x W' + b over a batch of row vectors.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::expect_ndim;

/// `x` (N, in) times `weight` (out, in) transposed, plus optional bias
/// (out,). Returns (N, out).
pub fn linear<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    expect_ndim("linear", "input", x.shape(), 2)?;
    expect_ndim("linear", "weight", weight.shape(), 2)?;
    let (n, cin) = (x.dim(0), x.dim(1));
    let (cout, win) = (weight.dim(0), weight.dim(1));
    if win != cin {
        return Err(Error::ShapeMismatch {
            op: "linear",
            detail: format!("input features {cin} vs weight features {win}"),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                detail: format!("bias {:?} must be [{cout}]", b.shape()),
            });
        }
    }

    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![E::ZERO; n * cout];
    for i in 0..n {
        let xrow = &xd[i * cin..(i + 1) * cin];
        let orow = &mut out[i * cout..(i + 1) * cout];
        for (o, ov) in orow.iter_mut().enumerate() {
            let wrow = &wd[o * cin..(o + 1) * cin];
            let mut acc = E::ZERO;
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += *xv * *wv;
            }
            *ov = acc;
        }
    }
    if let Some(b) = bias {
        let bd = b.data();
        for i in 0..n {
            for (o, &bv) in bd.iter().enumerate() {
                out[i * cout + o] += bv;
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
    Ok(Tensor::from_op(
        vec![n, cout],
        out,
        "linear",
        inputs,
        move |g, _out| {
            let gx = need_x.then(|| {
                let wd = wc.data();
                let mut gx = vec![E::ZERO; n * cin];
                for i in 0..n {
                    let grow = &g[i * cout..(i + 1) * cout];
                    let xrow = &mut gx[i * cin..(i + 1) * cin];
                    for (o, &gv) in grow.iter().enumerate() {
                        let wrow = &wd[o * cin..(o + 1) * cin];
                        for (xv, wv) in xrow.iter_mut().zip(wrow) {
                            *xv += gv * *wv;
                        }
                    }
                }
                gx
            });
            let gw = need_w.then(|| {
                let xd = xc.data();
                let mut gw = vec![E::ZERO; cout * cin];
                for i in 0..n {
                    let grow = &g[i * cout..(i + 1) * cout];
                    let xrow = &xd[i * cin..(i + 1) * cin];
                    for (o, &gv) in grow.iter().enumerate() {
                        let wrow = &mut gw[o * cin..(o + 1) * cin];
                        for (wv, xv) in wrow.iter_mut().zip(xrow) {
                            *wv += gv * *xv;
                        }
                    }
                }
                gw
            });
            let gb = match need_b {
                Some(true) => {
                    let mut gb = vec![E::ZERO; cout];
                    for i in 0..n {
                        for (o, gb) in gb.iter_mut().enumerate() {
                            *gb += g[i * cout + o];
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_computed_product() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let b = Tensor::from_vec(&[2], vec![10.0, -10.0]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.to_vec(), vec![8.0, -7.0]);
    }

    #[test]
    fn gradients_match_closed_form() {
        // loss = sum(x W'), dL/dx = column sums of W, dL/dW = x per row.
        let x = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap().with_grad();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 5.0, 6.0]).unwrap().with_grad();
        let y = linear(&x, &w, None).unwrap();
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, 8.0]);
        assert_eq!(w.grad().unwrap(), vec![3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_feature_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 3]);
        let w = Tensor::<f32>::zeros(&[2, 4]);
        assert!(linear(&x, &w, None).is_err());
    }
}
