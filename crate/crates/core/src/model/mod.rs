//! The W-Net: a VGG16-bn encoder feeding two structurally identical U-Net
//! style decoders. The reinforcement decoder ends in a sigmoid map that
//! multiplicatively gates the density decoder's final 32-channel features
//! before the density head.

mod checkpoint;
mod decoder;
mod encoder;
mod layers;

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, OptimizerState};
pub use decoder::{BranchKind, DecoderBranch, DECODER_WIDTHS};
pub use encoder::{Encoder, EncoderTaps, ENCODER_WIDTHS};
pub use layers::{Conv2d, ConvBnRelu, Module, Upsample};

use crate::error::{Error, FormatError, Result};
use crate::tensor::{self, Mode, Parameter, Scalar, Shape, Tensor4};

/// Standard deviation of the decoder weight initialization.
pub const DECODER_INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpsampleMode {
    Nearest,
    Transpose,
}

impl fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Transpose => "transpose",
        })
    }
}

impl FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(UpsampleMode::Nearest),
            "transpose" => Ok(UpsampleMode::Transpose),
            other => Err(Error::Config(format!("unknown upsample mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WNetConfig {
    /// Divisor applied to every channel width (1 reproduces the full network).
    pub channel_scale: usize,
    pub upsample: UpsampleMode,
    pub reinforcement_enabled: bool,
    pub input_channels: usize,
}

impl Default for WNetConfig {
    fn default() -> Self {
        WNetConfig {
            channel_scale: 1,
            upsample: UpsampleMode::Nearest,
            reinforcement_enabled: true,
            input_channels: 3,
        }
    }
}

impl WNetConfig {
    /// Eighth-width network for CPU experiments.
    pub fn tiny() -> Self {
        WNetConfig {
            channel_scale: 8,
            ..WNetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_scale == 0 {
            return Err(Error::Config("channel_scale must be positive".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        let widths = ENCODER_WIDTHS
            .iter()
            .flat_map(|b| b.iter().copied())
            .chain(DECODER_WIDTHS.iter().flat_map(|&(a, b)| [a, b]));
        for w in widths {
            if w % self.channel_scale != 0 || w / self.channel_scale < 4 {
                return Err(Error::Config(format!(
                    "channel_scale {} leaves width {w} non-integral or below 4",
                    self.channel_scale
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, width: usize) -> usize {
        width / self.channel_scale
    }
}

#[derive(Clone, Debug)]
pub struct WNetOutput<T> {
    /// `(n, 1, h/2, w/2)`, non-negative.
    pub density: Tensor4<T>,
    /// `(n, 1, h/2, w/2)` in `(0, 1)`; absent when the branch is disabled
    /// (the gate is then the constant 1).
    pub reinforcement: Option<Tensor4<T>>,
}

#[derive(Clone, Debug)]
struct ForwardCache<T> {
    dme_features: Tensor4<T>,
    gate: Option<Tensor4<T>>,
    density: Tensor4<T>,
}

#[derive(Clone, Debug)]
pub struct WNet<T> {
    config: WNetConfig,
    pub encoder: Encoder<T>,
    pub dme: DecoderBranch<T>,
    pub reinforcement: Option<DecoderBranch<T>>,
    pub dme_head: Conv2d<T>,
    pub reinforcement_head: Option<Conv2d<T>>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> WNet<T> {
    /// Builds the network with all weights zero; call [`WNet::init_weights`]
    /// or load a checkpoint afterwards.
    pub fn new(config: WNetConfig) -> Result<Self> {
        config.validate()?;
        let dme = DecoderBranch::new(&config, BranchKind::Density);
        let width = dme.out_channels();
        let (reinforcement, reinforcement_head) = if config.reinforcement_enabled {
            (
                Some(DecoderBranch::new(&config, BranchKind::Reinforcement)),
                Some(Conv2d::new("reinforcement.head", width, 1, 1)),
            )
        } else {
            (None, None)
        };
        Ok(WNet {
            config,
            encoder: Encoder::new(&config),
            dme,
            reinforcement,
            dme_head: Conv2d::new("dme.head", width, 1, 1),
            reinforcement_head,
            cache: None,
        })
    }

    /// Builds and initializes in one step.
    pub fn with_seed(config: WNetConfig, seed: u64) -> Result<Self> {
        let mut model = WNet::new(config)?;
        model.init_weights(seed);
        Ok(model)
    }

    pub fn config(&self) -> &WNetConfig {
        &self.config
    }

    /// Encoder convs: Kaiming-normal (fan-in); decoder convs and heads:
    /// N(0, 0.01^2); biases zero; batchnorm identity. Deterministic in `seed`.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.visit_mut(&mut |p| {
            let fill = |p: &mut Parameter<T>, v: f64| p.value.data_mut().iter_mut().for_each(|x| *x = T::from_f64(v));
            let name = p.name.clone();
            if name.ends_with(".weight") {
                let s = p.value.shape();
                let std = if name.starts_with("encoder.") {
                    (2.0 / (s.c * s.h * s.w) as f64).sqrt()
                } else {
                    DECODER_INIT_STD
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                for v in p.value.data_mut() {
                    *v = T::from_f64(normal.sample(&mut rng));
                }
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                fill(p, 1.0);
            } else {
                fill(p, 0.0);
            }
            p.zero_grad();
        });
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.encoder.set_mode(mode);
        self.dme.set_mode(mode);
        if let Some(r) = &mut self.reinforcement {
            r.set_mode(mode);
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        tensor::expect_axis("wnet.forward", "channels", self.config.input_channels, s.c)?;
        if !s.h.is_multiple_of(16) || !s.w.is_multiple_of(16) || s.h == 0 || s.w == 0 {
            return Err(Error::NotDivisible { h: s.h, w: s.w, divisor: 16 });
        }
        x.ensure_finite("wnet.input")
    }

    pub fn encode(&self, x: &Tensor4<T>) -> Result<EncoderTaps<T>> {
        self.check_input(x)?;
        self.encoder.infer(x)
    }

    /// Read-only forward pass. Batchnorm always uses running statistics.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<WNetOutput<T>> {
        let taps = self.encode(x)?;
        let features = self.dme.infer(&taps)?;
        let (gated, gate) = match (&self.reinforcement, &self.reinforcement_head) {
            (Some(branch), Some(head)) => {
                let r = branch.infer(&taps)?;
                let gate = tensor::sigmoid(&head.infer(&r)?);
                (tensor::mul_broadcast(&features, &gate)?, Some(gate))
            }
            _ => (features, None),
        };
        let density = tensor::relu(&self.dme_head.infer(&gated)?);
        Ok(WNetOutput {
            density,
            reinforcement: gate,
        })
    }

    /// Training forward pass: batchnorm follows the current mode, and every
    /// layer caches what [`WNet::backward`] needs.
    pub fn forward(&mut self, x: Tensor4<T>) -> Result<WNetOutput<T>> {
        self.check_input(&x)?;
        let taps = self.encoder.forward(x)?;
        let features = self.dme.forward(&taps)?;
        let (gated, gate) = match (&mut self.reinforcement, &mut self.reinforcement_head) {
            (Some(branch), Some(head)) => {
                let r = branch.forward(&taps)?;
                let gate = tensor::sigmoid(&head.forward(r)?);
                (tensor::mul_broadcast(&features, &gate)?, Some(gate))
            }
            _ => (features.clone(), None),
        };
        let density = tensor::relu(&self.dme_head.forward(gated)?);
        self.cache = Some(ForwardCache {
            dme_features: features,
            gate: gate.clone(),
            density: density.clone(),
        });
        Ok(WNetOutput {
            density,
            reinforcement: gate,
        })
    }

    /// Back-propagates output gradients, accumulating into every parameter.
    /// Returns the input gradient when `need_input` is set.
    pub fn backward(
        &mut self,
        grad_density: &Tensor4<T>,
        grad_reinforcement: Option<&Tensor4<T>>,
        need_input: bool,
    ) -> Result<Option<Tensor4<T>>> {
        let cache = self.cache.take().ok_or_else(|| Error::InvalidArgument {
            op: "wnet.backward",
            reason: "no cached forward pass".into(),
        })?;
        let g = tensor::relu_backward(&cache.density, grad_density);
        let g_gated = self.dme_head.backward(&g, true)?.expect("input gradient requested");
        let mut tap_grads = None;
        let g_features = match (&mut self.reinforcement, &mut self.reinforcement_head, &cache.gate) {
            (Some(branch), Some(head), Some(gate)) => {
                let (g_features, mut g_gate) = tensor::mul_broadcast_backward(&cache.dme_features, gate, &g_gated)?;
                if let Some(extra) = grad_reinforcement {
                    g_gate.add_assign(extra)?;
                }
                let g_logit = tensor::sigmoid_backward(gate, &g_gate);
                let g_r = head.backward(&g_logit, true)?.expect("input gradient requested");
                EncoderTaps::accumulate(&mut tap_grads, branch.backward(&g_r)?)?;
                g_features
            }
            _ => g_gated,
        };
        EncoderTaps::accumulate(&mut tap_grads, self.dme.backward(&g_features)?)?;
        self.encoder
            .backward(tap_grads.expect("density branch always contributes"), need_input)
    }

    /// Fingerprint of the piecewise-linear state of the last training
    /// forward pass: every relu sign and max-pool winner. Two parameter
    /// settings with equal fingerprints lie in the same smooth region.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.encoder.hash_pattern(&mut h);
        self.dme.hash_pattern(&mut h);
        if let Some(r) = &self.reinforcement {
            r.hash_pattern(&mut h);
        }
        if let Some(c) = &self.cache {
            layers::hash_signs(&c.density, &mut h);
        }
        h.finish()
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    /// Names and logical dims of every tensor in the model state, in
    /// traversal order.
    pub fn state_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push((p.name.clone(), p.dims())));
        out
    }

    pub fn state_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(NamedTensor::from_parameter(p)));
        out
    }

    /// Load every tensor of the model state. Fails without modifying the
    /// model on unknown names, missing names or shape mismatches.
    pub fn load_state(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        self.load_filtered(tensors, |_| true)
    }

    /// Load only the `encoder.*` tensors, e.g. converted pretrained weights.
    pub fn load_encoder(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let enc: Vec<NamedTensor> = tensors.iter().filter(|t| t.name.starts_with("encoder.")).cloned().collect();
        self.load_filtered(&enc, |name| name.starts_with("encoder."))
    }

    fn load_filtered(&mut self, tensors: &[NamedTensor], wanted: impl Fn(&str) -> bool) -> Result<()> {
        let layout: Vec<(String, Vec<usize>)> =
            self.state_layout().into_iter().filter(|(n, _)| wanted(n)).collect();
        let mut mismatched = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(FormatError::DuplicateTensor(t.name.clone()).into());
            }
            match layout.iter().find(|(n, _)| *n == t.name) {
                None => return Err(FormatError::UnknownTensor(t.name.clone()).into()),
                Some((_, dims)) if *dims != t.dims => mismatched.push(t.name.clone()),
                Some(_) => {}
            }
        }
        if !mismatched.is_empty() {
            return Err(Error::ShapeMismatch { names: mismatched });
        }
        let missing: Vec<String> = layout
            .iter()
            .filter(|(n, _)| !seen.contains(n.as_str()))
            .map(|(n, _)| n.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingTensors { names: missing });
        }
        self.visit_mut(&mut |p| {
            if let Some(t) = tensors.iter().find(|t| t.name == p.name) {
                for (dst, &src) in p.value.data_mut().iter_mut().zip(&t.data) {
                    *dst = T::from_f64(src as f64);
                }
            }
        });
        Ok(())
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint {
            config: self.config,
            step,
            epoch: 0,
            tensors: self.state_tensors(),
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = WNet::new(ckpt.config)?;
        model.load_state(&ckpt.tensors)?;
        Ok(model)
    }

    /// Output shape for an input of spatial size `h x w`.
    pub fn output_shape(&self, n: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, 1, h / 2, w / 2)
    }
}

impl<T: Scalar> Module<T> for WNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.encoder.visit(f);
        self.dme.visit(f);
        if let Some(r) = &self.reinforcement {
            r.visit(f);
        }
        if let Some(h) = &self.reinforcement_head {
            h.visit(f);
        }
        self.dme_head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.encoder.visit_mut(f);
        self.dme.visit_mut(f);
        if let Some(r) = &mut self.reinforcement {
            r.visit_mut(f);
        }
        if let Some(h) = &mut self.reinforcement_head {
            h.visit_mut(f);
        }
        self.dme_head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests;
