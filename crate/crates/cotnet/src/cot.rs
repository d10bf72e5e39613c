//! Contextual attention (CoT) unit.
//!
//! The unit replaces a k x k convolution inside a bottleneck. It mines two
//! context tensors from its input:
//!
//! * static context K1: a grouped k x k convolution over the neighborhood,
//!   followed by batch norm and relu;
//! * dynamic context K2: attention logits produced from [K1, X] by two
//!   consecutive 1x1 convolutions (the first normalized and rectified, the
//!   second biased and raw), reshaped to a per-position relation over the
//!   k x k offsets and used to aggregate a 1x1-projected value map.
//!
//! The two contexts are then fused by channel-wise gating: global average
//! of K1 + K2, a squeezed excitation trunk, and a two-way softmax choosing
//! per channel between the static and dynamic branch.
//!
//! A stride-2 unit average-pools its input 2x2/s2 before any context
//! computation. Attention heads share one distribution across `share`
//! adjacent channels. With `cardinality` > 1 every internal projection
//! becomes grouped: the key convolution uses 4*cardinality groups, the
//! value/theta/delta projections use `cardinality` groups, and the fusion
//! trunk stays dense.

use rand_chacha::ChaCha8Rng;

use crate::attention::{aggregate, to_relation, RelationMap};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::layers::{join, BatchNorm2dLayer, Conv2dLayer, Mode, Slot};
use crate::ops::{concat_channels, pool2d, softmax_axis, Conv2dArgs, PoolKind};
use crate::tensor::Tensor;

/// Which parts of the unit run (and are allocated).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CotMode {
    /// K1 path only: grouped conv + norm + relu.
    StaticOnly,
    /// K2 path only: attention-aggregated values.
    DynamicOnly,
    /// K1 + K2, elementwise.
    LinearFusion,
    /// Gated fusion of K1 and K2 (default).
    Full,
}

impl CotMode {
    pub fn name(self) -> &'static str {
        match self {
            CotMode::StaticOnly => "static_only",
            CotMode::DynamicOnly => "dynamic_only",
            CotMode::LinearFusion => "linear_fusion",
            CotMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "static_only" => Ok(CotMode::StaticOnly),
            "dynamic_only" => Ok(CotMode::DynamicOnly),
            "linear_fusion" => Ok(CotMode::LinearFusion),
            "full" => Ok(CotMode::Full),
            other => Err(Error::InvalidConfig(format!(
                "unknown cot mode '{other}' (expected static_only, dynamic_only, linear_fusion or full)"
            ))),
        }
    }
}

/// Hyper-parameters of one CoT unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CotConfig {
    pub channels: usize,
    /// Neighborhood extent (odd).
    pub kernel: usize,
    /// Group multiplier inherited from the surrounding backbone (1 for the
    /// plain family, 2 for the 2x48d family).
    pub cardinality: usize,
    /// Channels that share one attention head.
    pub share: usize,
    /// Attention trunk bottleneck: theta maps 2C -> 2C/reduction.
    pub reduction: usize,
    /// Fusion squeeze width: max(C / fusion_reduction, fusion_floor).
    pub fusion_reduction: usize,
    pub fusion_floor: usize,
    /// 1, or 2 (input average-pooled before context computation).
    pub stride: usize,
    /// Normalize the attention logits over the k*k offsets.
    pub softmax_attn: bool,
    pub mode: CotMode,
}

impl CotConfig {
    /// Standard knobs for a unit of the given width.
    pub fn for_width(channels: usize, cardinality: usize, stride: usize) -> Self {
        CotConfig {
            channels,
            kernel: 3,
            cardinality,
            share: 8,
            reduction: 4,
            fusion_reduction: 2,
            fusion_floor: 32,
            stride,
            softmax_attn: true,
            mode: CotMode::Full,
        }
    }

    /// Key-convolution group count.
    pub fn key_groups(&self) -> usize {
        4 * self.cardinality
    }

    /// Group count of the value/theta/delta projections.
    pub fn proj_groups(&self) -> usize {
        self.cardinality
    }

    /// Attention head count; each head covers `share` channels.
    pub fn heads(&self) -> usize {
        self.channels / self.share
    }

    /// Width of the rectified attention trunk.
    pub fn theta_dim(&self) -> usize {
        2 * self.channels / self.reduction
    }

    /// Attention logits per position: one per (offset, head).
    pub fn attn_dim(&self) -> usize {
        self.kernel * self.kernel * self.heads()
    }

    /// Fusion squeeze width.
    pub fn fuse_dim(&self) -> usize {
        (self.channels / self.fusion_reduction).max(self.fusion_floor)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 {
            return Err(Error::InvalidConfig("cot channels must be non-zero".into()));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::InvalidConfig(format!(
                "cot kernel must be odd, got {}",
                self.kernel
            )));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::InvalidConfig(format!(
                "cot stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.cardinality == 0 || self.fusion_reduction == 0 || self.fusion_floor == 0 {
            return Err(Error::InvalidConfig(
                "cot cardinality, fusion_reduction and fusion_floor must be non-zero".into(),
            ));
        }
        if c % self.key_groups() != 0 {
            return Err(Error::InvalidConfig(format!(
                "key groups {} must divide channels {c}",
                self.key_groups()
            )));
        }
        if self.share == 0 || c % self.share != 0 {
            return Err(Error::InvalidConfig(format!(
                "share {} must divide channels {c}",
                self.share
            )));
        }
        if self.reduction == 0 || (2 * c) % self.reduction != 0 || self.theta_dim() == 0 {
            return Err(Error::InvalidConfig(format!(
                "reduction {} must divide 2*channels = {} with a non-zero quotient",
                self.reduction,
                2 * c
            )));
        }
        let pg = self.proj_groups();
        if c % pg != 0 || self.theta_dim() % pg != 0 || self.heads() % pg != 0 {
            return Err(Error::InvalidConfig(format!(
                "cardinality {pg} must divide channels {c}, trunk width {} and heads {}",
                self.theta_dim(),
                self.heads()
            )));
        }
        Ok(())
    }
}

/// The two mined context tensors, before fusion.
pub struct ContextPair<E: Element> {
    /// K1: neighborhood convolution output.
    pub static_ctx: Tensor<E>,
    /// K2: attention-aggregated values.
    pub dynamic_ctx: Tensor<E>,
}

pub(crate) struct DynamicPath<E: Element> {
    pub(crate) value_conv: Conv2dLayer<E>,
    pub(crate) value_bn: BatchNorm2dLayer<E>,
    pub(crate) theta_conv: Conv2dLayer<E>,
    pub(crate) theta_bn: BatchNorm2dLayer<E>,
    pub(crate) delta_conv: Conv2dLayer<E>,
}

pub(crate) struct FusePath<E: Element> {
    pub(crate) squeeze_conv: Conv2dLayer<E>,
    pub(crate) squeeze_bn: BatchNorm2dLayer<E>,
    pub(crate) excite_static: Conv2dLayer<E>,
    pub(crate) excite_dynamic: Conv2dLayer<E>,
}

/// A CoT unit with its weights. Parts are allocated according to
/// `config.mode`: the static path always exists, the dynamic path for all
/// modes except `StaticOnly`, the fusion trunk only for `Full`.
pub struct CotUnit<E: Element> {
    pub config: CotConfig,
    pub(crate) key_conv: Conv2dLayer<E>,
    pub(crate) key_bn: BatchNorm2dLayer<E>,
    pub(crate) dynamic: Option<DynamicPath<E>>,
    pub(crate) fuse: Option<FusePath<E>>,
}

impl<E: Element> CotUnit<E> {
    pub fn new(config: CotConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let k = config.kernel;
        let one = Conv2dArgs::default();

        let key_conv = Conv2dLayer::new(
            c,
            c,
            k,
            Conv2dArgs { stride: 1, padding: k / 2, groups: config.key_groups() },
            false,
            rng,
        );
        let key_bn = BatchNorm2dLayer::new(c);

        let dynamic = (config.mode != CotMode::StaticOnly).then(|| {
            let pg = config.proj_groups();
            let td = config.theta_dim();
            DynamicPath {
                value_conv: Conv2dLayer::new(c, c, 1, Conv2dArgs { groups: pg, ..one }, false, rng),
                value_bn: BatchNorm2dLayer::new(c),
                theta_conv: Conv2dLayer::new(
                    2 * c,
                    td,
                    1,
                    Conv2dArgs { groups: pg, ..one },
                    false,
                    rng,
                ),
                theta_bn: BatchNorm2dLayer::new(td),
                delta_conv: Conv2dLayer::new(
                    td,
                    config.attn_dim(),
                    1,
                    Conv2dArgs { groups: pg, ..one },
                    true,
                    rng,
                ),
            }
        });

        let fuse = (config.mode == CotMode::Full).then(|| {
            let a = config.fuse_dim();
            FusePath {
                squeeze_conv: Conv2dLayer::new(c, a, 1, one, true, rng),
                squeeze_bn: BatchNorm2dLayer::new(a),
                excite_static: Conv2dLayer::new(a, c, 1, one, true, rng),
                excite_dynamic: Conv2dLayer::new(a, c, 1, one, true, rng),
            }
        });

        Ok(CotUnit { config, key_conv, key_bn, dynamic, fuse })
    }

    /// Average-pool the input when the unit is strided.
    fn maybe_pool(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        if self.config.stride == 2 {
            pool2d(x, PoolKind::Avg, 2, 2, 0)
        } else {
            Ok(x.clone())
        }
    }

    /// K1: grouped neighborhood convolution, normalized and rectified.
    /// `x` must already be at the unit's working resolution.
    pub fn static_context(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        Ok(self.key_bn.forward(&self.key_conv.forward(x)?, mode)?.relu())
    }

    /// Attention over the k*k offsets, conditioned on [K1, X]. Returns the
    /// relation map (N, H, W, k*k, heads), softmax-normalized over offsets
    /// when the config says so.
    pub fn cot_attention(
        &self,
        x: &Tensor<E>,
        static_ctx: &Tensor<E>,
        mode: Mode,
    ) -> Result<RelationMap<E>> {
        let dynamic = self.dynamic.as_ref().ok_or_else(|| {
            Error::InvalidConfig("this unit was built static-only; no attention weights".into())
        })?;
        let paired = concat_channels(static_ctx, x)?;
        let trunk = dynamic
            .theta_bn
            .forward(&dynamic.theta_conv.forward(&paired)?, mode)?
            .relu();
        let logits = dynamic.delta_conv.forward(&trunk)?;
        let rel = to_relation(&logits, self.config.kernel, self.config.heads())?;
        if self.config.softmax_attn {
            softmax_axis(&rel, 3)
        } else {
            Ok(rel)
        }
    }

    /// K2: gather the projected values with the relation weights.
    pub fn cot_aggregate(
        &self,
        x: &Tensor<E>,
        attention: &RelationMap<E>,
        mode: Mode,
    ) -> Result<Tensor<E>> {
        let dynamic = self.dynamic.as_ref().ok_or_else(|| {
            Error::InvalidConfig("this unit was built static-only; no value weights".into())
        })?;
        let v = dynamic.value_bn.forward(&dynamic.value_conv.forward(x)?, mode)?;
        aggregate(&v, attention, self.config.kernel, self.config.heads())
    }

    /// Both contexts at the unit's working resolution.
    pub fn contexts(&self, x: &Tensor<E>, mode: Mode) -> Result<ContextPair<E>> {
        let k1 = self.static_context(x, mode)?;
        let attn = self.cot_attention(x, &k1, mode)?;
        let k2 = self.cot_aggregate(x, &attn, mode)?;
        Ok(ContextPair { static_ctx: k1, dynamic_ctx: k2 })
    }

    /// Gated fusion: per-channel softmax between the static and dynamic
    /// branch, driven by the pooled sum of both.
    pub fn fuse_contexts(&self, pair: &ContextPair<E>, mode: Mode) -> Result<Tensor<E>> {
        let fuse = self.fuse.as_ref().ok_or_else(|| {
            Error::InvalidConfig("this unit carries no fusion weights (mode is not full)".into())
        })?;
        let (k1, k2) = (&pair.static_ctx, &pair.dynamic_ctx);
        if k1.shape() != k2.shape() {
            return Err(Error::ShapeMismatch {
                op: "fuse_contexts",
                detail: format!("{:?} vs {:?}", k1.shape(), k2.shape()),
            });
        }
        let (n, c) = (k1.dim(0), k1.dim(1));
        let sum = k1.add(k2)?;
        let pooled = pool2d(&sum, PoolKind::GlobalAvg, 0, 0, 0)?;
        let trunk = fuse
            .squeeze_bn
            .forward(&fuse.squeeze_conv.forward(&pooled)?, mode)?
            .relu();
        let logit_static = fuse.excite_static.forward(&trunk)?;
        let logit_dynamic = fuse.excite_dynamic.forward(&trunk)?;
        // (N, 2C, 1, 1) -> (N, 2, C, 1, 1), softmax over the branch axis.
        let stacked = concat_channels(&logit_static, &logit_dynamic)?
            .reshape(&[n, 2, c, 1, 1])?;
        let weights = softmax_axis(&stacked, 1)?;
        let w1 = weights.narrow(1, 0, 1)?.reshape(&[n, c, 1, 1])?;
        let w2 = weights.narrow(1, 1, 1)?.reshape(&[n, c, 1, 1])?;
        k1.scale_channels(&w1)?.add(&k2.scale_channels(&w2)?)
    }

    /// Forward in the unit's configured mode.
    pub fn cot_forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        self.ablation_forward(x, self.config.mode, mode)
    }

    /// Forward in an explicit ablation mode. The unit must carry the parts
    /// that mode needs (a `Full` unit can run every mode).
    pub fn ablation_forward(
        &self,
        x: &Tensor<E>,
        cot_mode: CotMode,
        mode: Mode,
    ) -> Result<Tensor<E>> {
        let x = self.maybe_pool(x)?;
        match cot_mode {
            CotMode::StaticOnly => self.static_context(&x, mode),
            CotMode::DynamicOnly => {
                let pair = self.contexts(&x, mode)?;
                Ok(pair.dynamic_ctx)
            }
            CotMode::LinearFusion => {
                let pair = self.contexts(&x, mode)?;
                pair.static_ctx.add(&pair.dynamic_ctx)
            }
            CotMode::Full => {
                let pair = self.contexts(&x, mode)?;
                self.fuse_contexts(&pair, mode)
            }
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(Slot<'a, E>)) {
        self.key_conv.visit(&join(prefix, "key_conv"), f);
        self.key_bn.visit(&join(prefix, "key_bn"), f);
        if let Some(d) = &self.dynamic {
            d.value_conv.visit(&join(prefix, "value_conv"), f);
            d.value_bn.visit(&join(prefix, "value_bn"), f);
            d.theta_conv.visit(&join(prefix, "theta_conv"), f);
            d.theta_bn.visit(&join(prefix, "theta_bn"), f);
            d.delta_conv.visit(&join(prefix, "delta_conv"), f);
        }
        if let Some(fu) = &self.fuse {
            fu.squeeze_conv.visit(&join(prefix, "fuse.squeeze_conv"), f);
            fu.squeeze_bn.visit(&join(prefix, "fuse.squeeze_bn"), f);
            fu.excite_static.visit(&join(prefix, "fuse.excite_static"), f);
            fu.excite_dynamic.visit(&join(prefix, "fuse.excite_dynamic"), f);
        }
    }

    pub fn param_count(&self) -> u64 {
        let mut total = self.key_conv.param_count() + self.key_bn.param_count();
        if let Some(d) = &self.dynamic {
            total += d.value_conv.param_count()
                + d.value_bn.param_count()
                + d.theta_conv.param_count()
                + d.theta_bn.param_count()
                + d.delta_conv.param_count();
        }
        if let Some(fu) = &self.fuse {
            total += fu.squeeze_conv.param_count()
                + fu.squeeze_bn.param_count()
                + fu.excite_static.param_count()
                + fu.excite_dynamic.param_count();
        }
        total
    }

    /// Per-sample multiply-accumulates at the given input extent. Counts
    /// convolutions, the value aggregation (k*k taps per channel per
    /// position), and the fusion projections; norms, relu, pooling and
    /// softmax are free by convention.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (h, w) = self.out_hw(h, w);
        let c = self.config.channels as u64;
        let mut total = self.key_conv.macs(h, w);
        if let Some(d) = &self.dynamic {
            total += d.value_conv.macs(h, w) + d.theta_conv.macs(h, w) + d.delta_conv.macs(h, w);
            // Aggregation: one MAC per (position, offset, channel).
            total += (h * w) as u64 * (self.config.kernel * self.config.kernel) as u64 * c;
        }
        if let Some(fu) = &self.fuse {
            total += fu.squeeze_conv.macs(1, 1)
                + fu.excite_static.macs(1, 1)
                + fu.excite_dynamic.macs(1, 1);
        }
        total
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        if self.config.stride == 2 {
            (h / 2, w / 2)
        } else {
            (h, w)
        }
    }

    /// Zero the attention projection (weights and bias). With softmax on,
    /// every offset then receives identical logits, so attention becomes
    /// uniform. Test hook for the degenerate-case checks.
    pub fn zero_delta(&self) {
        if let Some(d) = &self.dynamic {
            d.delta_conv.weight.data_mut().fill(E::ZERO);
            if let Some(b) = &d.delta_conv.bias {
                b.data_mut().fill(E::ZERO);
            }
        }
    }

    /// Copy the static-branch excitation into the dynamic branch so both
    /// fusion logits coincide. Test hook.
    pub fn tie_excitations(&self) {
        if let Some(fu) = &self.fuse {
            let w = fu.excite_static.weight.to_vec();
            fu.excite_dynamic.weight.data_mut().copy_from_slice(&w);
            let b = fu.excite_static.bias.as_ref().unwrap().to_vec();
            fu.excite_dynamic.bias.as_ref().unwrap().data_mut().copy_from_slice(&b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::randn;
    use rand::SeedableRng;

    fn unit(mode: CotMode) -> CotUnit<f64> {
        let mut cfg = CotConfig::for_width(16, 1, 1);
        cfg.mode = mode;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        CotUnit::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn config_defaults_validate_for_backbone_widths() {
        for c in [8, 16, 32, 64, 128, 256, 512] {
            CotConfig::for_width(c, 1, 1).validate().unwrap();
        }
        for c in [96, 192, 384, 768] {
            CotConfig::for_width(c, 2, 1).validate().unwrap();
        }
    }

    #[test]
    fn config_rejects_inconsistent_widths() {
        // 12 channels: key groups 4 divide, but share 8 does not.
        assert!(CotConfig::for_width(12, 1, 1).validate().is_err());
        // Even kernel.
        let mut cfg = CotConfig::for_width(16, 1, 1);
        cfg.kernel = 2;
        assert!(cfg.validate().is_err());
        // Stride 3.
        let mut cfg = CotConfig::for_width(16, 1, 1);
        cfg.stride = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn forward_preserves_shape_at_stride_1() {
        let u = unit(CotMode::Full);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn::<f64>(&[2, 16, 6, 6], 1.0, &mut rng);
        let y = u.cot_forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn stride_2_halves_spatial_extent() {
        let mut cfg = CotConfig::for_width(16, 1, 2);
        cfg.mode = CotMode::Full;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = CotUnit::<f64>::new(cfg, &mut rng).unwrap();
        let x = randn::<f64>(&[1, 16, 8, 8], 1.0, &mut rng);
        let y = u.cot_forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 16, 4, 4]);
    }

    #[test]
    fn attention_rows_normalize_with_softmax_on() {
        let u = unit(CotMode::Full);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn::<f64>(&[1, 16, 5, 5], 1.0, &mut rng);
        let k1 = u.static_context(&x, Mode::Train).unwrap();
        let attn = u.cot_attention(&x, &k1, Mode::Train).unwrap();
        assert_eq!(attn.shape(), &[1, 5, 5, 9, 2]);
        let a = attn.to_vec();
        for fiber in 0..25 * 2 {
            let (s, hh) = (fiber / 2, fiber % 2);
            let sum: f64 = (0..9).map(|o| a[(s * 9 + o) * 2 + hh]).sum();
            assert!((sum - 1.0).abs() < 1e-12, "fiber {fiber} sums to {sum}");
        }
    }

    #[test]
    fn zeroed_delta_yields_uniform_attention() {
        let u = unit(CotMode::Full);
        u.zero_delta();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randn::<f64>(&[1, 16, 4, 4], 1.0, &mut rng);
        let k1 = u.static_context(&x, Mode::Eval).unwrap();
        let attn = u.cot_attention(&x, &k1, Mode::Eval).unwrap();
        for &v in attn.to_vec().iter() {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tied_excitations_average_the_contexts() {
        let u = unit(CotMode::Full);
        u.tie_excitations();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k1 = randn::<f64>(&[2, 16, 3, 3], 1.0, &mut rng);
        let k2 = randn::<f64>(&[2, 16, 3, 3], 1.0, &mut rng);
        let pair = ContextPair { static_ctx: k1.clone(), dynamic_ctx: k2.clone() };
        let fused = u.fuse_contexts(&pair, Mode::Eval).unwrap();
        let expect: Vec<f64> = k1
            .to_vec()
            .iter()
            .zip(k2.to_vec())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        for (f, e) in fused.to_vec().iter().zip(expect) {
            assert!((f - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn mode_allocation_orders_param_counts() {
        let st = unit(CotMode::StaticOnly).param_count();
        let dy = unit(CotMode::DynamicOnly).param_count();
        let li = unit(CotMode::LinearFusion).param_count();
        let fu = unit(CotMode::Full).param_count();
        assert!(st < dy, "static {st} < dynamic {dy}");
        assert_eq!(dy, li, "dynamic and linear fusion share weights");
        assert!(li < fu, "linear {li} < full {fu}");
    }

    #[test]
    fn static_unit_refuses_dynamic_modes() {
        let u = unit(CotMode::StaticOnly);
        let x = Tensor::<f64>::zeros(&[1, 16, 4, 4]);
        assert!(u.ablation_forward(&x, CotMode::StaticOnly, Mode::Eval).is_ok());
        assert!(u.ablation_forward(&x, CotMode::Full, Mode::Eval).is_err());
        assert!(u.ablation_forward(&x, CotMode::DynamicOnly, Mode::Eval).is_err());
    }

    #[test]
    fn full_unit_runs_every_ablation_mode() {
        let u = unit(CotMode::Full);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = randn::<f64>(&[1, 16, 4, 4], 1.0, &mut rng);
        let full = u.ablation_forward(&x, CotMode::Full, Mode::Eval).unwrap();
        let st = u.ablation_forward(&x, CotMode::StaticOnly, Mode::Eval).unwrap();
        let dy = u.ablation_forward(&x, CotMode::DynamicOnly, Mode::Eval).unwrap();
        let li = u.ablation_forward(&x, CotMode::LinearFusion, Mode::Eval).unwrap();
        // Linear fusion is exactly K1 + K2.
        for ((l, s), d) in li.to_vec().iter().zip(st.to_vec()).zip(dy.to_vec()) {
            assert!((l - (s + d)).abs() < 1e-12);
        }
        assert_eq!(full.shape(), li.shape());
    }

    #[test]
    fn parameter_names_carry_prefix() {
        let u = unit(CotMode::Full);
        let mut names = Vec::new();
        u.visit("res4.block2.cot", &mut |s| names.push(s.name().to_string()));
        assert!(names.contains(&"res4.block2.cot.key_conv.weight".to_string()));
        assert!(names.contains(&"res4.block2.cot.delta_conv.bias".to_string()));
        assert!(names.contains(&"res4.block2.cot.fuse.excite_dynamic.weight".to_string()));
    }
}
