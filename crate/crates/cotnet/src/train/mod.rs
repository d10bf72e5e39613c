//! Training loop for the synthetic classification task: SGD with
//! momentum, warmup-then-cosine learning rate, label smoothing, optional
//! weight EMA, and per-epoch metrics. Everything is deterministic for a
//! fixed seed; two runs with the same config produce bit-identical
//! parameters and metrics.

pub mod checkpoint;
pub mod data;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::models::{canonical, ModelSpec, Network};
use crate::no_grad;
use crate::ops::smoothed_cross_entropy;
use crate::tensor::Tensor;
use data::{augment_batch, DataSource, DiskDataset, Split, ToyDataset, CLASSES};

/// ChaCha streams for trainer-side randomness, disjoint from the
/// per-sample data streams and the init stream.
const SHUFFLE_STREAM: u64 = 0xB41C;
const AUGMENT_STREAM: u64 = 0xAF1D;

/// Learning rate at a fractional epoch position: linear warmup from zero
/// to `peak`, then a cosine decay to zero at `total` epochs.
pub fn lr_at(progress: f64, total: f64, warmup: f64, peak: f64) -> f64 {
    if progress < warmup {
        peak * progress / warmup
    } else if progress >= total {
        0.0
    } else {
        let t = (progress - warmup) / (total - warmup);
        0.5 * peak * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// SGD with momentum and decoupled-by-rank weight decay: decay applies to
/// matrices and convolution kernels but not to vectors (norm scales and
/// shifts, biases), which are free to drift to their preferred offsets.
pub struct Sgd<E: Element> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub(crate) velocities: Vec<Vec<E>>,
    pub(crate) decay_mask: Vec<bool>,
    pub steps: u64,
}

impl<E: Element> Sgd<E> {
    pub fn new(params: &[(String, Tensor<E>)], momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocities: params.iter().map(|(_, t)| vec![E::ZERO; t.len()]).collect(),
            decay_mask: params.iter().map(|(_, t)| t.ndim() >= 2).collect(),
            steps: 0,
        }
    }

    /// One update over the same parameter list the optimizer was built
    /// with. Parameters without a gradient only see momentum and decay.
    pub fn step(&mut self, params: &[(String, Tensor<E>)], lr: f64) {
        let m = E::from_f64(self.momentum);
        let lr = E::from_f64(lr);
        for (i, (_, p)) in params.iter().enumerate() {
            let wd = E::from_f64(if self.decay_mask[i] { self.weight_decay } else { 0.0 });
            let grad = p.grad();
            let g = grad.as_deref().unwrap_or(&[]);
            let v = &mut self.velocities[i];
            let mut data = p.data_mut();
            for (j, pj) in data.iter_mut().enumerate() {
                let gj = g.get(j).copied().unwrap_or(E::ZERO);
                v[j] = m * v[j] + gj + wd * *pj;
                *pj -= lr * v[j];
            }
        }
        self.steps += 1;
    }
}

/// Exponential moving average of the parameters, updated after every
/// optimizer step: shadow <- decay * shadow + (1 - decay) * param.
pub struct Ema<E: Element> {
    pub decay: f64,
    pub(crate) shadow: Vec<Vec<E>>,
}

impl<E: Element> Ema<E> {
    pub fn new(params: &[(String, Tensor<E>)], decay: f64) -> Self {
        Ema { decay, shadow: params.iter().map(|(_, t)| t.to_vec()).collect() }
    }

    pub fn update(&mut self, params: &[(String, Tensor<E>)]) {
        let d = E::from_f64(self.decay);
        let one_minus = E::from_f64(1.0 - self.decay);
        for (s, (_, p)) in self.shadow.iter_mut().zip(params) {
            let data = p.data();
            for (sj, pj) in s.iter_mut().zip(data.iter()) {
                *sj = d * *sj + one_minus * *pj;
            }
        }
    }

    /// Overwrite the parameters with the shadow weights.
    pub fn apply(&self, params: &[(String, Tensor<E>)]) {
        for (s, (_, p)) in self.shadow.iter().zip(params) {
            p.data_mut().copy_from_slice(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Reference rate at batch 256; the effective peak is scaled by
    /// batch/256.
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// EMA decay per step; None disables the average.
    pub ema_decay: Option<f64>,
    /// Crop/flip jitter on training batches; None follows the data source
    /// (on for disk images, off for synthetic).
    pub augment: Option<bool>,
    pub seed: u64,
    pub train_len: usize,
    pub val_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch: 32,
            base_lr: 0.8,
            warmup_epochs: 5.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            label_smoothing: 0.1,
            ema_decay: None,
            augment: None,
            seed: 0,
            train_len: 256,
            val_len: 64,
        }
    }
}

impl TrainConfig {
    pub fn peak_lr(&self) -> f64 {
        self.base_lr * self.batch as f64 / 256.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.train_len == 0 || self.val_len == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch and dataset lengths must be non-zero".into(),
            ));
        }
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("base_lr must be > 0, momentum in [0, 1)".into()));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidConfig(format!("ema decay {d} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// One metrics line; top1 is a fraction in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub top1: f64,
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("epoch,split,loss,top1\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6},{:.4}\n", r.epoch, r.split, r.loss, r.top1));
    }
    out
}

fn top1_hits<E: Element>(logits: &Tensor<E>, labels: &[usize]) -> usize {
    let (n, k) = (logits.dim(0), logits.dim(1));
    let data = logits.data();
    let mut hits = 0;
    for (i, &label) in labels.iter().enumerate().take(n) {
        let row = &data[i * k..(i + 1) * k];
        let mut best = 0;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits
}

/// Train/val pair fed to [`train`].
pub struct TrainData {
    pub train: DataSource,
    pub val: DataSource,
}

impl TrainData {
    /// Procedural gratings sized by the config.
    pub fn synthetic(cfg: &TrainConfig) -> Self {
        TrainData {
            train: DataSource::Toy(ToyDataset::new(Split::Train, cfg.train_len, cfg.seed)),
            val: DataSource::Toy(ToyDataset::new(Split::Val, cfg.val_len, cfg.seed)),
        }
    }

    /// Both splits of an on-disk image tree.
    pub fn from_dir(root: &Path) -> Result<Self> {
        Ok(TrainData {
            train: DataSource::Disk(DiskDataset::open(root, Split::Train)?),
            val: DataSource::Disk(DiskDataset::open(root, Split::Val)?),
        })
    }

    /// Whether training batches get crop/flip jitter under this config.
    pub fn augment(&self, cfg: &TrainConfig) -> bool {
        cfg.augment.unwrap_or_else(|| self.train.augment_by_default())
    }
}

/// Mean loss and top-1 accuracy over a whole split, in eval mode.
pub fn evaluate<E: Element>(
    net: &Network<E>,
    dataset: &DataSource,
    batch: usize,
    smoothing: f64,
) -> Result<(f64, f64)> {
    no_grad(|| {
        let mut loss_sum = 0.0;
        let mut hits = 0;
        let mut seen = 0;
        let mut start = 0;
        while start < dataset.len() {
            let end = (start + batch).min(dataset.len());
            let indices: Vec<usize> = (start..end).collect();
            let (x, labels) = dataset.batch::<E>(&indices)?;
            let logits = net.forward(&x, Mode::Eval)?;
            let loss = smoothed_cross_entropy(&logits, &labels, smoothing)?;
            loss_sum += loss.item().to_f64() * labels.len() as f64;
            hits += top1_hits(&logits, &labels);
            seen += labels.len();
            start = end;
        }
        Ok((loss_sum / seen as f64, hits as f64 / seen as f64))
    })
}

/// Outcome of a full training run. `rows` holds the metrics in emission
/// order, starting with the pre-training epoch-0 evaluation.
pub struct TrainOutcome<E: Element> {
    pub rows: Vec<MetricsRow>,
    pub optimizer: Sgd<E>,
    pub ema: Option<Ema<E>>,
    pub rng: ChaCha8Rng,
}

/// Train in place. `on_row` sees each metrics row as it is produced.
pub fn train<E: Element>(
    net: &Network<E>,
    cfg: &TrainConfig,
    data: &TrainData,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome<E>> {
    cfg.validate()?;
    if data.train.classes() != net.spec.classes {
        return Err(Error::InvalidConfig(format!(
            "model '{}' expects {} classes but the data provides {}",
            net.spec.name,
            net.spec.classes,
            data.train.classes()
        )));
    }
    let augment = data.augment(cfg);
    let params = net.parameters();
    let mut optimizer = Sgd::new(&params, cfg.momentum, cfg.weight_decay);
    let mut ema = cfg.ema_decay.map(|d| Ema::new(&params, d));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(AUGMENT_STREAM);

    let mut rows = Vec::new();
    let mut push = |rows: &mut Vec<MetricsRow>, row: MetricsRow| {
        on_row(&row);
        rows.push(row);
    };

    let (loss, top1) = evaluate(net, &data.train, cfg.batch, cfg.label_smoothing)?;
    push(&mut rows, MetricsRow { epoch: 0, split: "train", loss, top1 });
    let (loss, top1) = evaluate(net, &data.val, cfg.batch, cfg.label_smoothing)?;
    push(&mut rows, MetricsRow { epoch: 0, split: "val", loss, top1 });

    let train_len = data.train.len();
    let steps_per_epoch = train_len.div_ceil(cfg.batch);
    let mut indices: Vec<usize> = (0..train_len).collect();
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        let mut seen = 0;
        for (bi, chunk) in indices.chunks(cfg.batch).enumerate() {
            let (x, labels) = data.train.batch::<E>(chunk)?;
            let x = if augment { augment_batch(&x, &mut aug_rng)? } else { x };
            let logits = net.forward(&x, Mode::Train)?;
            let loss = smoothed_cross_entropy(&logits, &labels, cfg.label_smoothing)?;
            let loss_value = loss.item().to_f64();
            let step = (epoch - 1) as u64 * steps_per_epoch as u64 + bi as u64;
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { step, value: loss_value });
            }
            net.zero_grads();
            loss.backward()?;
            let progress = (epoch - 1) as f64 + bi as f64 / steps_per_epoch as f64;
            let lr = lr_at(progress, cfg.epochs as f64, cfg.warmup_epochs, cfg.peak_lr());
            optimizer.step(&params, lr);
            if let Some(e) = ema.as_mut() {
                e.update(&params);
            }
            loss_sum += loss_value * labels.len() as f64;
            hits += top1_hits(&logits, &labels);
            seen += labels.len();
        }
        push(
            &mut rows,
            MetricsRow {
                epoch,
                split: "train",
                loss: loss_sum / seen as f64,
                top1: hits as f64 / seen as f64,
            },
        );
        let (loss, top1) = evaluate(net, &data.val, cfg.batch, cfg.label_smoothing)?;
        push(&mut rows, MetricsRow { epoch, split: "val", loss, top1 });
    }
    Ok(TrainOutcome { rows, optimizer, ema, rng })
}

/// The four CoT operating modes as tiny-model specs, in ascending
/// capacity order. Used by the ablation command and its tests.
pub fn ablation_variants() -> Vec<ModelSpec> {
    use crate::cot::CotMode;
    [CotMode::StaticOnly, CotMode::DynamicOnly, CotMode::LinearFusion, CotMode::Full]
        .into_iter()
        .map(|mode| {
            let mut spec = canonical("cotnet_tiny").expect("registry entry");
            spec.cot.mode = mode;
            spec.name = format!("cotnet_tiny_{}", mode.name());
            spec
        })
        .collect()
}

/// Fraction of `CLASSES` distinct labels; random logits should sit near
/// 1/CLASSES accuracy before training.
pub fn chance_accuracy() -> f64 {
    1.0 / CLASSES as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_model;

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let peak = 0.1;
        assert_eq!(lr_at(0.0, 20.0, 5.0, peak), 0.0);
        assert!((lr_at(2.5, 20.0, 5.0, peak) - 0.05).abs() < 1e-12);
        assert!((lr_at(5.0, 20.0, 5.0, peak) - peak).abs() < 1e-12);
        let mid = lr_at(12.5, 20.0, 5.0, peak);
        assert!((mid - 0.05).abs() < 1e-12, "cosine midpoint {mid}");
        assert!(lr_at(20.0, 20.0, 5.0, peak) == 0.0);
        // Monotone decay after warmup.
        let mut last = peak;
        for i in 0..30 {
            let lr = lr_at(5.0 + i as f64 * 0.5, 20.0, 5.0, peak);
            assert!(lr <= last + 1e-15);
            last = lr;
        }
    }

    #[test]
    fn sgd_matches_hand_computed_update() {
        let p = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, -2.0]).unwrap().with_grad();
        let params = vec![("p".to_string(), p.clone())];
        let mut opt = Sgd::new(&params, 0.9, 0.0);
        let loss = p.mul(&p).unwrap().sum_all();
        loss.backward().unwrap();
        // grad = 2p = [2, -4]; v = grad; p -= 0.1 v
        opt.step(&params, 0.1);
        let v = p.to_vec();
        assert!((v[0] - 0.8).abs() < 1e-12 && (v[1] + 1.6).abs() < 1e-12, "{v:?}");
        // Second step without fresh grads: momentum keeps moving.
        p.zero_grad();
        opt.step(&params, 0.1);
        let v2 = p.to_vec();
        assert!((v2[0] - (0.8 - 0.1 * 1.8)).abs() < 1e-12, "{v2:?}");
    }

    #[test]
    fn weight_decay_skips_vector_parameters() {
        let mat = Tensor::<f64>::from_vec(&[1, 1], vec![1.0]).unwrap().with_grad();
        let vec_p = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap().with_grad();
        let params = vec![("m".to_string(), mat.clone()), ("v".to_string(), vec_p.clone())];
        let mut opt = Sgd::new(&params, 0.0, 0.5);
        opt.step(&params, 1.0);
        assert!((mat.to_vec()[0] - 0.5).abs() < 1e-12);
        assert_eq!(vec_p.to_vec()[0], 1.0);
    }

    #[test]
    fn ema_tracks_parameters() {
        let p = Tensor::<f64>::from_vec(&[1, 1], vec![0.0]).unwrap().with_grad();
        let params = vec![("p".to_string(), p.clone())];
        let mut ema = Ema::new(&params, 0.9);
        p.data_mut()[0] = 1.0;
        ema.update(&params);
        assert!((ema.shadow[0][0] - 0.1).abs() < 1e-12);
        ema.apply(&params);
        assert!((p.to_vec()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn metrics_csv_is_stable() {
        let rows = vec![
            MetricsRow { epoch: 0, split: "train", loss: 2.079442, top1: 0.125 },
            MetricsRow { epoch: 1, split: "val", loss: 1.5, top1: 0.5 },
        ];
        assert_eq!(
            metrics_to_csv(&rows),
            "epoch,split,loss,top1\n0,train,2.079442,0.1250\n1,val,1.500000,0.5000\n"
        );
    }

    #[test]
    fn ablation_variants_cover_all_modes_in_capacity_order() {
        let variants = ablation_variants();
        assert_eq!(variants.len(), 4);
        let names: Vec<&str> = variants.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "cotnet_tiny_static_only",
                "cotnet_tiny_dynamic_only",
                "cotnet_tiny_linear_fusion",
                "cotnet_tiny_full"
            ]
        );
        let params: Vec<u64> = variants
            .iter()
            .map(|v| build_model::<f32>(v, 0).unwrap().param_count())
            .collect();
        assert!(params[0] < params[1], "{params:?}");
        assert_eq!(params[1], params[2], "{params:?}");
        assert!(params[2] < params[3], "{params:?}");
    }

    #[test]
    fn disk_training_augments_and_checks_classes() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["left", "right"] {
            let sub = dir.path().join(class);
            std::fs::create_dir(&sub).unwrap();
            for i in 0..12u8 {
                let mut bytes = Vec::new();
                bytes.extend_from_slice(data::IMAGE_MAGIC);
                bytes.extend_from_slice(&32u32.to_le_bytes());
                bytes.extend_from_slice(&32u32.to_le_bytes());
                let shade = if class == "left" { 40 } else { 210 };
                bytes.extend((0..32 * 32 * 3).map(|p| shade + ((p as u8) ^ i) % 40));
                std::fs::write(sub.join(format!("img{i:02}.rgb8")), bytes).unwrap();
            }
        }
        let data = TrainData::from_dir(dir.path()).unwrap();
        assert_eq!((data.train.len(), data.val.len()), (22, 2));
        let cfg = TrainConfig { epochs: 1, batch: 11, seed: 4, ..TrainConfig::default() };
        assert!(data.augment(&cfg), "disk data defaults to augmentation");
        assert!(!data.augment(&TrainConfig { augment: Some(false), ..cfg.clone() }));

        // An 8-class head cannot train on 2-class data.
        let eight = build_model::<f32>(&canonical("resnet_tiny").unwrap(), 0).unwrap();
        assert!(matches!(
            train(&eight, &cfg, &data, |_| {}),
            Err(Error::InvalidConfig(_))
        ));

        let mut spec = canonical("resnet_tiny").unwrap();
        spec.classes = 2;
        let net = build_model::<f32>(&spec, cfg.seed).unwrap();
        let out = train(&net, &cfg, &data, |_| {}).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert!(out.rows.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn two_epoch_run_is_deterministic_and_logged() {
        let spec = canonical("resnet_tiny").unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch: 16,
            train_len: 32,
            val_len: 16,
            seed: 11,
            ema_decay: Some(0.99),
            ..TrainConfig::default()
        };
        let run = |_: ()| {
            let net = build_model::<f32>(&spec, cfg.seed).unwrap();
            let out = train(&net, &cfg, &TrainData::synthetic(&cfg), |_| {}).unwrap();
            (metrics_to_csv(&out.rows), net.parameters()[0].1.to_vec())
        };
        let (csv_a, p_a) = run(());
        let (csv_b, p_b) = run(());
        assert_eq!(csv_a, csv_b);
        assert_eq!(
            p_a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            p_b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        // 2 pre-training rows + 2 per epoch.
        assert_eq!(csv_a.lines().count(), 1 + 2 + 4);
        assert!(csv_a.starts_with("epoch,split,loss,top1\n0,train,"));
    }
}
