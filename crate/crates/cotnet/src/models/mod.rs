//! Backbone assembly: four-stage residual networks whose bottleneck
//! spatial operator is either a (possibly grouped) 3x3 convolution or a
//! CoT unit. The registry reproduces the standard 50/101-layer layouts in
//! both families plus tiny variants for fast tests and training runs.
//!
//! A model is: stem (7x7/s2 conv, norm, relu, 3x3/s2 max pool), stages
//! res2..res5 of pre-activation-free bottlenecks (1x1 reduce, spatial
//! unit, 1x1 expand, residual add), global average pooling, and a linear
//! classifier. The first block of res3/res4/res5 runs its spatial unit at
//! stride 2 and downsamples the shortcut with a strided 1x1 projection.

pub mod specfile;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cot::{CotConfig, CotMode, CotUnit};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::layers::{join, BatchNorm2dLayer, Conv2dLayer, LinearLayer, Mode, Slot};
use crate::ops::{pool2d, Conv2dArgs, PoolKind};
use crate::tensor::Tensor;

pub const STAGE_NAMES: [&str; 4] = ["res2", "res3", "res4", "res5"];

/// Spatial operator inside a bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    /// 3x3 convolution with `cardinality` groups.
    Conv,
    /// Contextual attention unit.
    Cot,
}

impl UnitKind {
    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Conv => "conv",
            UnitKind::Cot => "cot",
        }
    }
}

/// One residual stage: `blocks` bottlenecks of operator width `width`
/// emitting `out` channels each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    /// Channels of the spatial operator (conv2 / CoT width).
    pub width: usize,
    /// Block output channels.
    pub out: usize,
    pub kind: UnitKind,
}

/// CoT knobs shared by every CoT unit in a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CotTemplate {
    pub kernel: usize,
    pub share: usize,
    pub reduction: usize,
    pub fusion_reduction: usize,
    pub fusion_floor: usize,
    pub softmax_attn: bool,
    pub mode: CotMode,
}

impl Default for CotTemplate {
    fn default() -> Self {
        CotTemplate {
            kernel: 3,
            share: 8,
            reduction: 4,
            fusion_reduction: 2,
            fusion_floor: 32,
            softmax_attn: true,
            mode: CotMode::Full,
        }
    }
}

impl CotTemplate {
    pub fn config(&self, channels: usize, cardinality: usize, stride: usize) -> CotConfig {
        CotConfig {
            channels,
            kernel: self.kernel,
            cardinality,
            share: self.share,
            reduction: self.reduction,
            fusion_reduction: self.fusion_reduction,
            fusion_floor: self.fusion_floor,
            stride,
            softmax_attn: self.softmax_attn,
            mode: self.mode,
        }
    }
}

/// Complete architecture description. Everything needed to build, train,
/// profile, or serialize a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub classes: usize,
    pub stem_width: usize,
    /// Group count of conv operators / group multiplier of CoT projections.
    pub cardinality: usize,
    pub stages: [StageSpec; 4],
    pub cot: CotTemplate,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "model '{}' needs at least 2 classes",
                self.name
            )));
        }
        if self.stem_width == 0 || self.cardinality == 0 {
            return Err(Error::InvalidConfig(
                "stem width and cardinality must be non-zero".into(),
            ));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return Err(Error::InvalidConfig(format!(
                "model name '{}' must be non-empty [A-Za-z0-9_]",
                self.name
            )));
        }
        for (i, st) in self.stages.iter().enumerate() {
            let stage = STAGE_NAMES[i];
            if st.blocks == 0 || st.width == 0 || st.out == 0 {
                return Err(Error::InvalidConfig(format!(
                    "{stage}: blocks, width and out must be non-zero"
                )));
            }
            match st.kind {
                UnitKind::Conv => {
                    if st.width % self.cardinality != 0 {
                        return Err(Error::InvalidConfig(format!(
                            "{stage}: cardinality {} must divide conv width {}",
                            self.cardinality, st.width
                        )));
                    }
                }
                UnitKind::Cot => {
                    self.cot.config(st.width, self.cardinality, 1).validate()?;
                }
            }
        }
        Ok(())
    }

    /// True when any stage uses the CoT operator.
    pub fn uses_cot(&self) -> bool {
        self.stages.iter().any(|s| s.kind == UnitKind::Cot)
    }
}

fn stages(
    blocks: [usize; 4],
    widths: [usize; 4],
    outs: [usize; 4],
    kind: UnitKind,
) -> [StageSpec; 4] {
    [0, 1, 2, 3].map(|i| StageSpec { blocks: blocks[i], width: widths[i], out: outs[i], kind })
}

const OUTS: [usize; 4] = [256, 512, 1024, 2048];

/// Canonical registry. Recognized names:
/// resnet50, resnet101, resnext50, resnext101 (32x4d),
/// cotnet50, cotnet101, cotnext50, cotnext101 (2x48d),
/// resnet_tiny, cotnet_tiny (width/8, one block per stage, 8 classes).
pub fn canonical(name: &str) -> Result<ModelSpec> {
    let blocks50 = [3, 4, 6, 3];
    let blocks101 = [3, 4, 23, 3];
    let (classes, stem) = (1000, 64);
    let spec = match name {
        "resnet50" | "resnet101" => ModelSpec {
            name: name.into(),
            classes,
            stem_width: stem,
            cardinality: 1,
            stages: stages(
                if name == "resnet50" { blocks50 } else { blocks101 },
                [64, 128, 256, 512],
                OUTS,
                UnitKind::Conv,
            ),
            cot: CotTemplate::default(),
        },
        "resnext50" | "resnext101" => ModelSpec {
            name: name.into(),
            classes,
            stem_width: stem,
            cardinality: 32,
            stages: stages(
                if name == "resnext50" { blocks50 } else { blocks101 },
                [128, 256, 512, 1024],
                OUTS,
                UnitKind::Conv,
            ),
            cot: CotTemplate::default(),
        },
        "cotnet50" | "cotnet101" => ModelSpec {
            name: name.into(),
            classes,
            stem_width: stem,
            cardinality: 1,
            stages: stages(
                if name == "cotnet50" { blocks50 } else { blocks101 },
                [64, 128, 256, 512],
                OUTS,
                UnitKind::Cot,
            ),
            cot: CotTemplate::default(),
        },
        "cotnext50" | "cotnext101" => ModelSpec {
            name: name.into(),
            classes,
            stem_width: stem,
            cardinality: 2,
            stages: stages(
                if name == "cotnext50" { blocks50 } else { blocks101 },
                [96, 192, 384, 768],
                OUTS,
                UnitKind::Cot,
            ),
            cot: CotTemplate::default(),
        },
        "resnet_tiny" | "cotnet_tiny" => ModelSpec {
            name: name.into(),
            classes: 8,
            stem_width: 8,
            cardinality: 1,
            stages: stages(
                [1, 1, 1, 1],
                [8, 16, 32, 64],
                [32, 64, 128, 256],
                if name == "resnet_tiny" { UnitKind::Conv } else { UnitKind::Cot },
            ),
            cot: CotTemplate::default(),
        },
        other => return Err(Error::UnknownModel(other.into())),
    };
    debug_assert!(spec.validate().is_ok());
    Ok(spec)
}

pub fn canonical_names() -> &'static [&'static str] {
    &[
        "resnet50",
        "resnet101",
        "resnext50",
        "resnext101",
        "cotnet50",
        "cotnet101",
        "cotnext50",
        "cotnext101",
        "resnet_tiny",
        "cotnet_tiny",
    ]
}

/// Per-stage operator replacement on a plain (cardinality-1 conv) base:
/// flags select which of res2..res5 switch to the CoT operator. The name
/// records the flags, e.g. resnet50_cot0011.
pub fn stage_replacement_variants(base: &ModelSpec, flags: [bool; 4]) -> Result<ModelSpec> {
    if base.cardinality != 1 || base.stages.iter().any(|s| s.kind != UnitKind::Conv) {
        return Err(Error::InvalidConfig(format!(
            "stage replacement expects a plain conv base, got '{}'",
            base.name
        )));
    }
    let mut spec = base.clone();
    for (st, &f) in spec.stages.iter_mut().zip(&flags) {
        if f {
            st.kind = UnitKind::Cot;
        }
    }
    spec.name = format!(
        "{}_cot{}",
        base.name,
        flags.iter().map(|&f| if f { '1' } else { '0' }).collect::<String>()
    );
    spec.validate()?;
    Ok(spec)
}

pub(crate) enum Unit<E: Element> {
    Conv(Conv2dLayer<E>),
    Cot(CotUnit<E>),
}

impl<E: Element> Unit<E> {
    fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        match self {
            Unit::Conv(c) => c.forward(x),
            Unit::Cot(u) => u.cot_forward(x, mode),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(Slot<'a, E>)) {
        match self {
            Unit::Conv(c) => c.visit(&join(prefix, "conv2"), f),
            Unit::Cot(u) => u.visit(&join(prefix, "cot"), f),
        }
    }
}

pub(crate) struct Bottleneck<E: Element> {
    pub(crate) conv1: Conv2dLayer<E>,
    pub(crate) bn1: BatchNorm2dLayer<E>,
    pub(crate) unit: Unit<E>,
    pub(crate) bn2: BatchNorm2dLayer<E>,
    pub(crate) conv3: Conv2dLayer<E>,
    pub(crate) bn3: BatchNorm2dLayer<E>,
    pub(crate) down: Option<(Conv2dLayer<E>, BatchNorm2dLayer<E>)>,
}

impl<E: Element> Bottleneck<E> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        in_ch: usize,
        width: usize,
        out: usize,
        kind: UnitKind,
        cardinality: usize,
        stride: usize,
        cot: &CotTemplate,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let one = Conv2dArgs::default();
        let conv1 = Conv2dLayer::new(in_ch, width, 1, one, false, rng);
        let bn1 = BatchNorm2dLayer::new(width);
        let unit = match kind {
            UnitKind::Conv => Unit::Conv(Conv2dLayer::new(
                width,
                width,
                3,
                Conv2dArgs { stride, padding: 1, groups: cardinality },
                false,
                rng,
            )),
            UnitKind::Cot => {
                Unit::Cot(CotUnit::new(cot.config(width, cardinality, stride), rng)?)
            }
        };
        let bn2 = BatchNorm2dLayer::new(width);
        let conv3 = Conv2dLayer::new(width, out, 1, one, false, rng);
        // Zero-init the closing norm so each block starts as an identity on
        // the residual path.
        let bn3 = BatchNorm2dLayer::zero_init(out);
        let down = (stride != 1 || in_ch != out)
            .then(|| {
                (
                    Conv2dLayer::new(
                        in_ch,
                        out,
                        1,
                        Conv2dArgs { stride, padding: 0, groups: 1 },
                        false,
                        rng,
                    ),
                    BatchNorm2dLayer::new(out),
                )
            });
        Ok(Bottleneck { conv1, bn1, unit, bn2, conv3, bn3, down })
    }

    pub(crate) fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu();
        let y = self.bn2.forward(&self.unit.forward(&y, mode)?, mode)?.relu();
        let y = self.bn3.forward(&self.conv3.forward(&y)?, mode)?;
        let shortcut = match &self.down {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok(y.add(&shortcut)?.relu())
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(Slot<'a, E>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.unit.visit(prefix, f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn3.visit(&join(prefix, "bn3"), f);
        if let Some((conv, bn)) = &self.down {
            conv.visit(&join(prefix, "down.conv"), f);
            bn.visit(&join(prefix, "down.bn"), f);
        }
    }
}

/// Spatial extent of one stage output during a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTrace {
    pub name: String,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
}

/// A built model: weights plus the spec that produced them.
pub struct Network<E: Element> {
    pub spec: ModelSpec,
    pub(crate) stem_conv: Conv2dLayer<E>,
    pub(crate) stem_bn: BatchNorm2dLayer<E>,
    pub(crate) stages: Vec<Vec<Bottleneck<E>>>,
    pub(crate) fc: LinearLayer<E>,
}

/// Build a network with seeded initialization. Identical (spec, seed)
/// pairs produce bit-identical weights.
pub fn build_model<E: Element>(spec: &ModelSpec, seed: u64) -> Result<Network<E>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem_conv = Conv2dLayer::new(
        3,
        spec.stem_width,
        7,
        Conv2dArgs { stride: 2, padding: 3, groups: 1 },
        false,
        &mut rng,
    );
    let stem_bn = BatchNorm2dLayer::new(spec.stem_width);
    let mut stages = Vec::with_capacity(4);
    let mut in_ch = spec.stem_width;
    for (si, st) in spec.stages.iter().enumerate() {
        let mut blocks = Vec::with_capacity(st.blocks);
        for b in 0..st.blocks {
            // res2 keeps the post-pool resolution; later stages downsample
            // in their first block.
            let stride = if si > 0 && b == 0 { 2 } else { 1 };
            blocks.push(Bottleneck::new(
                in_ch,
                st.width,
                st.out,
                st.kind,
                spec.cardinality,
                stride,
                &spec.cot,
                &mut rng,
            )?);
            in_ch = st.out;
        }
        stages.push(blocks);
    }
    let fc = LinearLayer::new(in_ch, spec.classes, &mut rng);
    Ok(Network { spec: spec.clone(), stem_conv, stem_bn, stages, fc })
}

impl<E: Element> Network<E> {
    /// Class logits for an NCHW batch (3 input channels).
    pub fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        Ok(self.forward_traced(x, mode)?.0)
    }

    /// Forward pass that also records each stage's output extent.
    pub fn forward_traced(
        &self,
        x: &Tensor<E>,
        mode: Mode,
    ) -> Result<(Tensor<E>, Vec<StageTrace>)> {
        let mut trace = Vec::with_capacity(6);
        let mut y = self.stem_bn.forward(&self.stem_conv.forward(x)?, mode)?.relu();
        trace.push(StageTrace {
            name: "stem".into(),
            channels: y.dim(1),
            h: y.dim(2),
            w: y.dim(3),
        });
        y = pool2d(&y, PoolKind::Max, 3, 2, 1)?;
        for (si, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                y = block.forward(&y, mode)?;
            }
            trace.push(StageTrace {
                name: STAGE_NAMES[si].into(),
                channels: y.dim(1),
                h: y.dim(2),
                w: y.dim(3),
            });
        }
        let pooled = pool2d(&y, PoolKind::GlobalAvg, 0, 0, 0)?;
        trace.push(StageTrace {
            name: "pool".into(),
            channels: pooled.dim(1),
            h: 1,
            w: 1,
        });
        let flat = pooled.reshape(&[pooled.dim(0), pooled.dim(1)])?;
        Ok((self.fc.forward(&flat)?, trace))
    }

    /// Visit every named parameter and buffer in deterministic order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(Slot<'a, E>)) {
        self.stem_conv.visit("stem.conv", f);
        self.stem_bn.visit("stem.bn", f);
        for (si, blocks) in self.stages.iter().enumerate() {
            for (bi, block) in blocks.iter().enumerate() {
                block.visit(&format!("{}.block{bi}", STAGE_NAMES[si]), f);
            }
        }
        self.fc.visit("fc", f);
    }

    /// Learnable parameters with their names, in visit order.
    pub fn parameters(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.visit(&mut |slot| {
            if let Slot::Param { name, tensor } = slot {
                out.push((name, tensor.clone()));
            }
        });
        out
    }

    /// Total learnable parameter count.
    pub fn param_count(&self) -> u64 {
        self.parameters().iter().map(|(_, t)| t.len() as u64).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.parameters() {
            t.zero_grad();
        }
    }
}
