//! Label-smoothed cross entropy over a batch of logit rows.
//!
//! With smoothing eps, the target for the true class is (1 - eps) and the
//! remaining mass eps is spread uniformly over the other classes. The loss
//! per sample is the cross entropy between that target and the softmax of
//! the logits, computed via log-sum-exp for stability; the batch loss is
//! the mean.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::expect_ndim;

/// Mean smoothed cross entropy of `logits` (N, K) against integer labels.
/// Requires K >= 2 (the off-class mass is spread over K - 1 classes).
pub fn smoothed_cross_entropy<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
    smoothing: f64,
) -> Result<Tensor<E>> {
    expect_ndim("smoothed_cross_entropy", "logits", logits.shape(), 2)?;
    let (n, k) = (logits.dim(0), logits.dim(1));
    if n == 0 {
        return Err(Error::EmptyReduction("smoothed_cross_entropy"));
    }
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "smoothed cross entropy needs at least 2 classes, got {k}"
        )));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "smoothed_cross_entropy",
            detail: format!("{} labels for batch of {n}", labels.len()),
        });
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::InvalidConfig(format!(
            "smoothing {smoothing} must lie in [0, 1)"
        )));
    }
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
    }

    let eps = E::from_f64(smoothing);
    let off = E::from_f64(smoothing / (k - 1) as f64);
    let on = E::ONE - eps;
    let inv_n = E::from_f64(1.0 / n as f64);

    let ld = logits.data();
    let mut total = E::ZERO;
    for (i, &y) in labels.iter().enumerate() {
        let row = &ld[i * k..(i + 1) * k];
        let mut max = row[0];
        for &v in &row[1..] {
            if v > max {
                max = v;
            }
        }
        let mut sum = E::ZERO;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        // loss = lse - sum_c target_c * logit_c
        let mut dot = E::ZERO;
        for (c, &v) in row.iter().enumerate() {
            dot += if c == y { on * v } else { off * v };
        }
        total += lse - dot;
    }
    let loss = total * inv_n;
    drop(ld);

    let lc = logits.clone();
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![],
        vec![loss],
        "smoothed_cross_entropy",
        vec![logits.clone()],
        move |g, _out| {
            // d loss / d logit = (softmax - target) / N, scaled by upstream.
            let scale = g[0] * inv_n;
            let ld = lc.data();
            let mut gx = vec![E::ZERO; n * k];
            for (i, &y) in labels.iter().enumerate() {
                let row = &ld[i * k..(i + 1) * k];
                let mut max = row[0];
                for &v in &row[1..] {
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = E::ZERO;
                for &v in row {
                    sum += (v - max).exp();
                }
                let inv_sum = E::ONE / sum;
                for (c, &v) in row.iter().enumerate() {
                    let p = (v - max).exp() * inv_sum;
                    let t = if c == y { on } else { off };
                    gx[i * k + c] = (p - t) * scale;
                }
            }
            vec![Some(gx)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_log_k() {
        // With identical logits the softmax is uniform and the loss is
        // ln(K) regardless of smoothing.
        let logits = Tensor::from_vec(&[2, 8], vec![0.25; 16]).unwrap();
        let loss = smoothed_cross_entropy(&logits, &[3, 7], 0.1).unwrap();
        assert!((loss.item() - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_smoothing_matches_plain_cross_entropy() {
        let logits = Tensor::from_vec(&[1, 2], vec![2.0, 0.0]).unwrap();
        let loss = smoothed_cross_entropy(&logits, &[0], 0.0).unwrap();
        let expect = -(2.0f64.exp() / (2.0f64.exp() + 1.0)).ln();
        assert!((loss.item() - expect).abs() < 1e-12);
    }

    #[test]
    fn gradient_sums_to_zero_per_row() {
        // softmax and the smoothed target both sum to 1, so row gradients
        // must sum to 0.
        let logits =
            Tensor::from_vec(&[2, 4], vec![0.5, -1.0, 2.0, 0.0, 1.0, 1.0, -3.0, 0.2])
                .unwrap()
                .with_grad();
        let loss = smoothed_cross_entropy(&logits, &[2, 0], 0.1).unwrap();
        loss.backward().unwrap();
        let g = logits.grad().unwrap();
        for i in 0..2 {
            let s: f64 = g[i * 4..(i + 1) * 4].iter().sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        let err = smoothed_cross_entropy(&logits, &[3], 0.1).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 3, classes: 3 }));
    }

    #[test]
    fn rejects_single_class() {
        let logits = Tensor::<f64>::zeros(&[1, 1]);
        assert!(smoothed_cross_entropy(&logits, &[0], 0.1).is_err());
    }
}
