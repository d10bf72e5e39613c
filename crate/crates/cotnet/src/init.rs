//! Weight initialization. All draws go through a caller-supplied ChaCha8
//! stream so model construction is reproducible from a single seed.

use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::tensor::Tensor;

/// Normal(0, std^2) tensor.
pub fn randn<E: Element>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let s = E::from_f64(std);
    let data: Vec<E> = (0..n).map(|_| E::standard_normal(rng) * s).collect();
    Tensor::from_vec(shape, data).expect("shape/data length agree by construction")
}

/// He-style fan-out init for conv weights (out, in/g, k, k):
/// std = sqrt(2 / (out * k * k)). Keeps response variance stable through
/// relu stacks regardless of group count.
pub fn conv_weight<E: Element>(
    cout: usize,
    cin_g: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<E> {
    let fan_out = cout * k * k;
    randn(&[cout, cin_g, k, k], (2.0 / fan_out as f64).sqrt(), rng)
}
