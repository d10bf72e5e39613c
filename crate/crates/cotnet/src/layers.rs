//! Thin stateful wrappers over the kernel ops: convolution, batch norm,
//! and linear layers that own their parameters, plus the visitor used to
//! enumerate named parameters and persistent buffers for optimizers,
//! checkpoints, and the profiler.

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::Result;
use crate::init::{conv_weight, randn};
use crate::ops::{batch_norm2d, conv2d, linear, BnMode, Conv2dArgs};
use crate::tensor::Tensor;

/// Forward-pass mode; selects batch-norm statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One named piece of persistent model state.
pub enum Slot<'a, E: Element> {
    /// Learnable tensor (participates in SGD and weight decay policy).
    Param { name: String, tensor: &'a Tensor<E> },
    /// Non-learnable buffer (batch-norm running statistics).
    Buffer { name: String, data: &'a RefCell<Vec<E>> },
}

impl<E: Element> Slot<'_, E> {
    pub fn name(&self) -> &str {
        match self {
            Slot::Param { name, .. } => name,
            Slot::Buffer { name, .. } => name,
        }
    }
}

pub(crate) fn join(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}

/// Convolution layer: weight (out, in/groups, k, k), optional bias.
pub struct Conv2dLayer<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub args: Conv2dArgs,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl<E: Element> Conv2dLayer<E> {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        args: Conv2dArgs,
        with_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = conv_weight::<E>(cout, cin / args.groups, k, rng).with_grad();
        let bias = with_bias.then(|| Tensor::zeros(&[cout]).with_grad());
        Conv2dLayer { weight, bias, args, cin, cout, k }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        conv2d(x, &self.weight, self.bias.as_ref(), self.args)
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(Slot<'a, E>)) {
        f(Slot::Param { name: join(prefix, "weight"), tensor: &self.weight });
        if let Some(b) = &self.bias {
            f(Slot::Param { name: join(prefix, "bias"), tensor: b });
        }
    }

    pub fn param_count(&self) -> u64 {
        let w = self.cout * (self.cin / self.args.groups) * self.k * self.k;
        (w + if self.bias.is_some() { self.cout } else { 0 }) as u64
    }

    /// Multiply-accumulate count for one sample at the given input extent.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let ho = (h + 2 * self.args.padding - self.k) / self.args.stride + 1;
        let wo = (w + 2 * self.args.padding - self.k) / self.args.stride + 1;
        (ho * wo) as u64
            * self.cout as u64
            * (self.cin / self.args.groups) as u64
            * (self.k * self.k) as u64
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.args.padding - self.k) / self.args.stride + 1,
            (w + 2 * self.args.padding - self.k) / self.args.stride + 1,
        )
    }
}

/// Batch normalization layer owning affine parameters and running stats.
pub struct BatchNorm2dLayer<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: RefCell<Vec<E>>,
    pub running_var: RefCell<Vec<E>>,
    pub channels: usize,
    pub momentum: E,
    pub eps: E,
}

impl<E: Element> BatchNorm2dLayer<E> {
    pub fn new(channels: usize) -> Self {
        Self::with_gamma(channels, E::ONE)
    }

    /// Residual branches zero-init their closing norm so blocks start as
    /// identities.
    pub fn zero_init(channels: usize) -> Self {
        Self::with_gamma(channels, E::ZERO)
    }

    fn with_gamma(channels: usize, g: E) -> Self {
        BatchNorm2dLayer {
            gamma: Tensor::full(&[channels], g).with_grad(),
            beta: Tensor::zeros(&[channels]).with_grad(),
            running_mean: RefCell::new(vec![E::ZERO; channels]),
            running_var: RefCell::new(vec![E::ONE; channels]),
            channels,
            momentum: E::from_f64(0.1),
            eps: E::from_f64(1e-5),
        }
    }

    pub fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let bn_mode = match mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        };
        batch_norm2d(
            x,
            &self.gamma,
            &self.beta,
            &mut self.running_mean.borrow_mut(),
            &mut self.running_var.borrow_mut(),
            bn_mode,
            self.momentum,
            self.eps,
        )
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(Slot<'a, E>)) {
        f(Slot::Param { name: join(prefix, "weight"), tensor: &self.gamma });
        f(Slot::Param { name: join(prefix, "bias"), tensor: &self.beta });
        f(Slot::Buffer { name: join(prefix, "running_mean"), data: &self.running_mean });
        f(Slot::Buffer { name: join(prefix, "running_var"), data: &self.running_var });
    }

    pub fn param_count(&self) -> u64 {
        2 * self.channels as u64
    }
}

/// Fully connected classifier head.
pub struct LinearLayer<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub cin: usize,
    pub cout: usize,
}

impl<E: Element> LinearLayer<E> {
    pub fn new(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        LinearLayer {
            weight: randn::<E>(&[cout, cin], 0.01, rng).with_grad(),
            bias: Tensor::zeros(&[cout]).with_grad(),
            cin,
            cout,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        linear(x, &self.weight, Some(&self.bias))
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(Slot<'a, E>)) {
        f(Slot::Param { name: join(prefix, "weight"), tensor: &self.weight });
        f(Slot::Param { name: join(prefix, "bias"), tensor: &self.bias });
    }

    pub fn param_count(&self) -> u64 {
        (self.cin * self.cout + self.cout) as u64
    }

    pub fn macs(&self) -> u64 {
        (self.cin * self.cout) as u64
    }
}
