//! Naive reference implementations shared by the oracle and acceptance
//! test targets. Written as direct loops over the mathematical
//! definitions, sharing no code with the library kernels.

use cotnet::attention::{aggregate, LsaBlock, LsaConfig};
use cotnet::no_grad;
use cotnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn randv(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// 1x1 convolution as an explicit fiber-by-fiber matrix product.
fn naive_pointwise(x: &[f64], w: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c * hw];
    for ni in 0..n {
        for co in 0..c {
            for s in 0..hw {
                let mut acc = 0.0;
                for ci in 0..c {
                    acc += w[co * c + ci] * x[(ni * c + ci) * hw + s];
                }
                out[(ni * c + co) * hw + s] = acc;
            }
        }
    }
    out
}

/// Reference for the whole local self-attention block: projections,
/// content and position logits, softmax over the window, aggregation.
/// Out-of-image taps contribute zero content and zero value; position
/// bias applies to every offset.
#[allow(clippy::too_many_arguments)]
fn naive_lsa_forward(
    x: &[f64],
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    pos: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    heads: usize,
) -> Vec<f64> {
    let d = c / heads;
    let k2 = k * k;
    let r = (k / 2) as isize;
    let hw = h * w;
    let q = naive_pointwise(x, wq, n, c, hw);
    let key = naive_pointwise(x, wk, n, c, hw);
    let v = naive_pointwise(x, wv, n, c, hw);

    let mut out = vec![0.0; n * c * hw];
    for ni in 0..n {
        for hh in 0..heads {
            for y in 0..h {
                for xx in 0..w {
                    let mut logits = vec![0.0; k2];
                    for o in 0..k2 {
                        let iy = y as isize + (o / k) as isize - r;
                        let ix = xx as isize + (o % k) as isize - r;
                        let mut content = 0.0;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            for j in 0..d {
                                let ch = (ni * c + hh * d + j) * hw;
                                content += q[ch + y * w + xx]
                                    * key[ch + iy as usize * w + ix as usize];
                            }
                        }
                        let mut bias = 0.0;
                        for j in 0..d {
                            bias += q[(ni * c + hh * d + j) * hw + y * w + xx] * pos[o * d + j];
                        }
                        logits[o] = content + bias;
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for j in 0..d {
                        let mut acc = 0.0;
                        for o in 0..k2 {
                            let iy = y as isize + (o / k) as isize - r;
                            let ix = xx as isize + (o % k) as isize - r;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += exps[o] / z
                                * v[(ni * c + hh * d + j) * hw + iy as usize * w + ix as usize];
                        }
                        out[(ni * c + hh * d + j) * hw + y * w + xx] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Reference for relation-weighted value aggregation with zero padding.
fn naive_aggregate(
    v: &[f64],
    rel: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    heads: usize,
) -> Vec<f64> {
    let d = c / heads;
    let k2 = k * k;
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![0.0; n * c * hw];
    for ni in 0..n {
        for ch in 0..c {
            let hh = ch / d;
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for o in 0..k2 {
                        let iy = y as isize + (o / k) as isize - r;
                        let ix = xx as isize + (o % k) as isize - r;
                        if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let rv = rel[(((ni * h + y) * w + xx) * k2 + o) * heads + hh];
                        acc += rv * v[(ni * c + ch) * hw + iy as usize * w + ix as usize];
                    }
                    out[(ni * c + ch) * hw + y * w + xx] = acc;
                }
            }
        }
    }
    out
}

/// Random (n, heads, d, h, w, k) small enough to keep 100 cases quick but
/// varied enough to cover edge geometry (1x1 images, k > extent).
fn random_geometry(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize, usize, usize) {
    let n = rng.gen_range(1..=2);
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let d = rng.gen_range(1..=3);
    let h = rng.gen_range(1..=5);
    let w = rng.gen_range(1..=5);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    (n, heads, d, h, w, k)
}

/// (case description, |library - oracle| max deviation) per random case.
pub fn lsa_oracle_cases(cases: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out = Vec::with_capacity(cases);
    for case in 0..cases {
        let (n, heads, d, h, w, k) = random_geometry(&mut rng);
        let c = heads * d;
        let config = LsaConfig { channels: c, kernel: k, heads };
        let mut weight_rng = ChaCha8Rng::seed_from_u64(1000 + case as u64);
        let block = LsaBlock::<f64>::new(config, &mut weight_rng).unwrap();

        let xv = randv(&mut rng, n * c * h * w);
        let x = Tensor::from_vec(&[n, c, h, w], xv.clone()).unwrap();
        let got = no_grad(|| block.forward(&x)).unwrap();

        let expect = naive_lsa_forward(
            &xv,
            &block.query.to_vec(),
            &block.key.to_vec(),
            &block.value.to_vec(),
            &block.pos.to_vec(),
            n,
            c,
            h,
            w,
            k,
            heads,
        );
        let diff = max_abs_diff(&got.to_vec(), &expect);
        out.push((format!("case {case} (n={n} c={c} h={h} w={w} k={k} heads={heads})"), diff));
    }
    out
}

/// Same shape of result for the aggregation kernel alone.
pub fn aggregate_oracle_cases(cases: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Vec::with_capacity(cases);
    for case in 0..cases {
        let (n, heads, d, h, w, k) = random_geometry(&mut rng);
        let c = heads * d;
        let vv = randv(&mut rng, n * c * h * w);
        let rv = randv(&mut rng, n * h * w * k * k * heads);
        let v = Tensor::from_vec(&[n, c, h, w], vv.clone()).unwrap();
        let rel = Tensor::from_vec(&[n, h, w, k * k, heads], rv.clone()).unwrap();
        let got = no_grad(|| aggregate(&v, &rel, k, heads)).unwrap();
        let expect = naive_aggregate(&vv, &rv, n, c, h, w, k, heads);
        let diff = max_abs_diff(&got.to_vec(), &expect);
        out.push((format!("case {case} (n={n} c={c} h={h} w={w} k={k} heads={heads})"), diff));
    }
    out
}
