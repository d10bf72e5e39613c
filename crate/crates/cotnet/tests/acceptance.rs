//! Acceptance gate: one test per release criterion, each printing a
//! single pass/fail line (visible under `--nocapture`). The criteria
//! pin budget reproduction, cost ordering, stage geometry, gradient
//! and oracle agreement, closed-form degenerate behavior, toy-training
//! convergence, and bit-level determinism.

mod common;

use common::randv;

use std::time::Instant;

use cotnet::attention::aggregate;
use cotnet::cot::{CotConfig, CotUnit};
use cotnet::gradcheck::{run_standard_suite, standard_suite, SUITE_SEEDS};
use cotnet::layers::{Mode, Slot};
use cotnet::models::{build_model, canonical, Network};
use cotnet::profile::budget_line;
use cotnet::tensor::Tensor;
use cotnet::train::checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint};
use cotnet::train::{ablation_variants, metrics_to_csv, train, MetricsRow, TrainConfig, TrainData};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FIFTY_LAYER: [&str; 4] = ["resnet50", "resnext50", "cotnet50", "cotnext50"];

fn verdict(n: usize, label: &str, ok: bool) {
    println!("criterion {n} ({label}): {}", if ok { "pass" } else { "FAIL" });
}

fn budget(name: &str) -> (u64, u64, bool) {
    let net = build_model::<f32>(&canonical(name).unwrap(), 0).unwrap();
    let line = budget_line(&net.cost_report(224).unwrap());
    let ok = line.params_ok() == Some(true) && line.macs_ok() == Some(true);
    (line.params, line.macs, ok)
}

#[test]
fn criterion_1_published_budgets_match_at_224() {
    let mut failures = Vec::new();
    for name in FIFTY_LAYER {
        let (params, macs, ok) = budget(name);
        if !ok {
            failures.push(format!("{name}: {params} params / {macs} macs out of window"));
        }
    }
    verdict(1, "parameter and mac budgets", failures.is_empty());
    assert!(failures.is_empty(), "{}", failures.join("; "));
}

#[test]
fn criterion_2_cost_ordering_between_families() {
    let (p_rn, m_rn, _) = budget("resnet50");
    let (p_rx, m_rx, _) = budget("resnext50");
    let (p_cn, m_cn, _) = budget("cotnet50");
    let (p_cx, m_cx, _) = budget("cotnext50");

    // Context blocks undercut the plain baseline on both axes; the
    // grouped variant trades parameters for near-equal compute.
    let cheaper = p_cn < p_rn && m_cn < m_rn;
    let heavier_params = p_cx > p_rx;
    let mac_gap = (m_cx as f64 - m_rx as f64).abs() / m_rx as f64;
    let comparable_macs = mac_gap <= 0.02;

    let ok = cheaper && heavier_params && comparable_macs;
    verdict(2, "cost ordering", ok);
    assert!(cheaper, "cotnet50 {p_cn}/{m_cn} not below resnet50 {p_rn}/{m_rn}");
    assert!(heavier_params, "cotnext50 params {p_cx} not above resnext50 {p_rx}");
    assert!(comparable_macs, "mac gap {:.4} exceeds 2% ({m_cx} vs {m_rx})", mac_gap);
}

#[test]
fn criterion_3_stage_extents_at_224() {
    let started = Instant::now();
    let expected = [("stem", 112), ("res2", 56), ("res3", 28), ("res4", 14), ("res5", 7)];
    let x = Tensor::<f32>::from_vec(&[1, 3, 224, 224], vec![0.0; 3 * 224 * 224]).unwrap();
    let mut failures = Vec::new();
    for name in FIFTY_LAYER {
        let net = build_model::<f32>(&canonical(name).unwrap(), 0).unwrap();
        let (_, trace) = net.forward_traced(&x, Mode::Eval).unwrap();
        for (stage, extent) in expected {
            match trace.iter().find(|t| t.name == stage) {
                Some(t) if t.h == extent && t.w == extent => {}
                Some(t) => failures.push(format!("{name}.{stage}: {}x{}", t.h, t.w)),
                None => failures.push(format!("{name}.{stage}: missing")),
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = failures.is_empty() && elapsed < 60.0;
    verdict(3, "stage extents 112/56/28/14/7", ok);
    assert!(failures.is_empty(), "{}", failures.join("; "));
    assert!(elapsed < 60.0, "four traced forwards took {elapsed:.1}s");
}

#[test]
fn criterion_4_gradient_suite_over_five_seeds() {
    let started = Instant::now();
    assert!(SUITE_SEEDS.len() >= 5, "suite must cover at least 5 seeds");
    let tolerances: Vec<f64> = standard_suite().iter().map(|c| c.settings.tolerance).collect();
    assert!(tolerances.iter().all(|&t| t <= 1e-4), "a case exceeds the 1e-4 ceiling");
    assert!(tolerances.iter().any(|&t| t <= 1e-5), "no case pinned at primitive tolerance");

    let reports = run_standard_suite(&SUITE_SEEDS, |_| {}).unwrap();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} seed {}: {:.3e}", r.name, r.seed, r.max_rel_err))
        .collect();
    let elapsed = started.elapsed().as_secs_f64();
    let ok = failed.is_empty() && elapsed < 300.0;
    verdict(4, "gradient checks", ok);
    assert_eq!(reports.len(), tolerances.len() * SUITE_SEEDS.len());
    assert!(failed.is_empty(), "{}", failed.join("; "));
    assert!(elapsed < 300.0, "gradient suite took {elapsed:.1}s");
}

#[test]
fn criterion_5_naive_oracles_within_1e10() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (case, diff) in common::lsa_oracle_cases(100).into_iter().chain(common::aggregate_oracle_cases(100)) {
        worst = worst.max(diff);
        if diff > 1e-10 {
            failures.push(format!("{case}: {diff:.3e}"));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = failures.is_empty() && elapsed < 60.0;
    verdict(5, "naive-oracle agreement", ok);
    assert!(failures.is_empty(), "{}", failures.join("; "));
    assert!(elapsed < 60.0, "oracle comparison took {elapsed:.1}s");
    println!("  worst oracle deviation {worst:.3e} over 200 cases");
}

/// Copies of the unit's parameter tensors, keyed by slot name. Tensor
/// clones share storage, so writing through them edits the unit.
fn params_of(unit: &CotUnit<f64>) -> Vec<(String, Tensor<f64>)> {
    let mut out = Vec::new();
    unit.visit("u", &mut |slot| {
        if let Slot::Param { name, tensor } = slot {
            out.push((name, tensor.clone()));
        }
    });
    out
}

fn zero_params(unit: &CotUnit<f64>, infix: &str) {
    for (name, tensor) in params_of(unit) {
        if name.contains(infix) {
            tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Overwrites `dst`-infixed parameters with their `src` counterparts.
fn tie_params(unit: &CotUnit<f64>, src: &str, dst: &str) {
    let params = params_of(unit);
    for (name, tensor) in &params {
        let Some(tail) = name.find(src).map(|i| name[i + src.len()..].to_string()) else {
            continue;
        };
        let target = params
            .iter()
            .find(|(n, _)| n.contains(dst) && n.ends_with(&tail))
            .expect("mirrored parameter");
        target.1.data_mut().copy_from_slice(&tensor.data());
    }
}

#[test]
fn criterion_6_degenerate_configurations_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, c, h, w, k, heads) = (2, 8, 5, 6, 3, 2);

    // One-hot relation at the zero offset: aggregation must return the
    // values untouched.
    let v = Tensor::from_vec(&[n, c, h, w], randv(&mut rng, n * c * h * w)).unwrap();
    let mut rel = vec![0.0f64; n * h * w * k * k * heads];
    let center = (k * k) / 2;
    for pos in 0..n * h * w {
        for head in 0..heads {
            rel[(pos * k * k + center) * heads + head] = 1.0;
        }
    }
    let rel = Tensor::from_vec(&[n, h, w, k * k, heads], rel).unwrap();
    let got = aggregate(&v, &rel, k, heads).unwrap();
    let identity_diff = common::max_abs_diff(&got.to_vec(), &v.to_vec());

    // Zeroed attention projection: logits vanish, softmax flattens to
    // 1/k^2, and aggregation reduces to the zero-padded window mean.
    let unit = CotUnit::<f64>::new(CotConfig::for_width(c, 1, 1), &mut rng).unwrap();
    zero_params(&unit, "delta_conv");
    let x = Tensor::from_vec(&[1, c, h, w], randv(&mut rng, c * h * w)).unwrap();
    let k1 = unit.static_context(&x, Mode::Eval).unwrap();
    let attn = unit.cot_attention(&x, &k1, Mode::Eval).unwrap();
    let uniform = 1.0 / (k * k) as f64;
    let uniform_diff = attn
        .to_vec()
        .iter()
        .map(|a| (a - uniform).abs())
        .fold(0.0f64, f64::max);

    let v1 = Tensor::from_vec(&[1, c, h, w], randv(&mut rng, c * h * w)).unwrap();
    let window_mean = {
        let src = v1.to_vec();
        let mut out = vec![0.0f64; c * h * w];
        let r = k / 2;
        for ch in 0..c {
            for y in 0..h {
                for x0 in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let (sy, sx) = (y + dy, x0 + dx);
                            if sy >= r && sx >= r && sy - r < h && sx - r < w {
                                acc += src[(ch * h + sy - r) * w + sx - r];
                            }
                        }
                    }
                    out[(ch * h + y) * w + x0] = acc * uniform;
                }
            }
        }
        out
    };
    let attn1 = {
        // Reuse the flattened relation at head count 1 so the window
        // mean has a single weight per offset.
        let unit1 = CotUnit::<f64>::new(CotConfig::for_width(c, 1, 1), &mut rng).unwrap();
        zero_params(&unit1, "delta_conv");
        let k1 = unit1.static_context(&v1, Mode::Eval).unwrap();
        unit1.cot_attention(&v1, &k1, Mode::Eval).unwrap()
    };
    let mean_got = aggregate(&v1, &attn1, k, 1).unwrap();
    let mean_diff = common::max_abs_diff(&mean_got.to_vec(), &window_mean);

    // Tied excitation weights: both gate logits coincide, the branch
    // softmax pins at one half, and fusion is the exact average.
    let tied = CotUnit::<f64>::new(CotConfig::for_width(c, 1, 1), &mut rng).unwrap();
    tie_params(&tied, "excite_static", "excite_dynamic");
    let x2 = Tensor::from_vec(&[2, c, h, w], randv(&mut rng, 2 * c * h * w)).unwrap();
    let pair = tied.contexts(&x2, Mode::Eval).unwrap();
    let fused = tied.fuse_contexts(&pair, Mode::Eval).unwrap();
    let expect: Vec<f64> = pair
        .static_ctx
        .to_vec()
        .iter()
        .zip(pair.dynamic_ctx.to_vec())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let fusion_diff = common::max_abs_diff(&fused.to_vec(), &expect);

    let ok = identity_diff <= 1e-12 && uniform_diff <= 1e-12 && mean_diff <= 1e-12 && fusion_diff <= 1e-12;
    verdict(6, "degenerate closed forms", ok);
    assert!(identity_diff <= 1e-12, "one-hot aggregation off by {identity_diff:.3e}");
    assert!(uniform_diff <= 1e-12, "zeroed projection attention off by {uniform_diff:.3e}");
    assert!(mean_diff <= 1e-12, "uniform aggregation vs window mean off by {mean_diff:.3e}");
    assert!(fusion_diff <= 1e-12, "tied-gate fusion vs average off by {fusion_diff:.3e}");
}

fn train_rows(rows: &[MetricsRow]) -> Vec<&MetricsRow> {
    rows.iter().filter(|r| r.split == "train").collect()
}

#[test]
fn criterion_7_toy_training_converges() {
    // Part one: the tiny context model must clear 95% training accuracy
    // inside the default 20-epoch schedule and a five-minute budget.
    let started = Instant::now();
    let cfg = TrainConfig::default();
    let data = TrainData::synthetic(&cfg);
    let spec = canonical("cotnet_tiny").unwrap();
    let net = build_model::<f32>(&spec, cfg.seed).unwrap();
    let outcome = train(&net, &cfg, &data, |_| {}).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let best = train_rows(&outcome.rows)
        .iter()
        .map(|r| r.top1)
        .fold(0.0f64, f64::max);
    let converged = best >= 0.95 && elapsed < 300.0;

    // Part two: every ablation variant must be learning by epoch 10,
    // for three seeds apiece.
    let mut regressions = Vec::new();
    for spec in ablation_variants() {
        for seed in [1, 2, 3] {
            let cfg = TrainConfig { epochs: 10, seed, ..TrainConfig::default() };
            let data = TrainData::synthetic(&cfg);
            let net = build_model::<f32>(&spec, cfg.seed).unwrap();
            let outcome = train(&net, &cfg, &data, |_| {}).unwrap();
            let rows = train_rows(&outcome.rows);
            let (first, last) = (rows.first().unwrap().loss, rows.last().unwrap().loss);
            if last >= first {
                regressions.push(format!("{} seed {seed}: {first:.4} -> {last:.4}", spec.name));
            }
        }
    }

    let ok = converged && regressions.is_empty();
    verdict(7, "toy-training convergence", ok);
    assert!(best >= 0.95, "best training top1 {best:.4} below 0.95");
    assert!(elapsed < 300.0, "20-epoch run took {elapsed:.1}s");
    assert!(regressions.is_empty(), "{}", regressions.join("; "));
}

fn short_run(cfg: &TrainConfig) -> (Network<f32>, String, Vec<u8>) {
    let data = TrainData::synthetic(cfg);
    let net = build_model::<f32>(&canonical("cotnet_tiny").unwrap(), cfg.seed).unwrap();
    let outcome = train(&net, cfg, &data, |_| {}).unwrap();
    let csv = metrics_to_csv(&outcome.rows);
    let bytes = checkpoint_bytes(
        &net,
        Some(&outcome.optimizer),
        outcome.ema.as_ref(),
        &outcome.rng,
        cfg.epochs as u32,
    );
    (net, csv, bytes)
}

#[test]
fn criterion_8_bitwise_determinism() {
    let cfg = TrainConfig {
        epochs: 2,
        train_len: 64,
        val_len: 16,
        ema_decay: Some(0.99),
        seed: 7,
        ..TrainConfig::default()
    };
    let (net, csv_a, bytes_a) = short_run(&cfg);
    let (_, csv_b, bytes_b) = short_run(&cfg);
    let logs_match = csv_a == csv_b;
    let ckpts_match = bytes_a == bytes_b;

    // Round trip: a reloaded checkpoint must produce bit-identical
    // logits on a fresh input.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    save_checkpoint(&path, &net, None, None, &ChaCha8Rng::seed_from_u64(0), 2).unwrap();
    let loaded = load_checkpoint::<f32>(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probe: Vec<f32> = (0..2 * 3 * 32 * 32).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let x = Tensor::from_vec(&[2, 3, 32, 32], probe).unwrap();
    let before = net.forward(&x, Mode::Eval).unwrap().to_vec();
    let after = loaded.network.forward(&x, Mode::Eval).unwrap().to_vec();
    let logits_match =
        before.len() == after.len() && before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits());

    let ok = logs_match && ckpts_match && logits_match;
    verdict(8, "bit-level determinism", ok);
    assert!(logs_match, "metrics logs differ between identical runs");
    assert!(ckpts_match, "checkpoint bytes differ between identical runs");
    assert!(logits_match, "reloaded network drifted on the probe batch");
}
