//! The decoder structure shared by the density and reinforcement branches.
//!
//! up(b5) ++ b4 -> block 1 -> up ++ b3 -> block 2 -> up ++ b2 -> block 3,
//! where every block is a 1x1 conv followed by a 3x3 conv.

use std::hash::Hasher;

use super::encoder::EncoderTaps;
use super::layers::{ConvBnRelu, Module, Upsample};
use super::{UpsampleMode, WNetConfig};
use crate::error::Result;
use crate::tensor::{self, Mode, Parameter, Scalar, Tensor4};

/// Base `(conv1x1, conv3x3)` widths of decoder blocks 1 to 3.
pub const DECODER_WIDTHS: [(usize, usize); 3] = [(256, 256), (128, 128), (64, 32)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    Density,
    Reinforcement,
}

impl BranchKind {
    pub fn prefix(self) -> &'static str {
        match self {
            BranchKind::Density => "dme",
            BranchKind::Reinforcement => "reinforcement",
        }
    }
}

#[derive(Clone, Debug)]
struct Stage<T> {
    name: String,
    up: Upsample<T>,
    convs: [ConvBnRelu<T>; 2],
    /// Channels coming from the upsampled path (the rest are the skip).
    up_channels: usize,
}

#[derive(Clone, Debug)]
pub struct DecoderBranch<T> {
    pub kind: BranchKind,
    stages: Vec<Stage<T>>,
}

impl<T: Scalar> DecoderBranch<T> {
    pub fn new(config: &WNetConfig, kind: BranchKind) -> Self {
        let prefix = kind.prefix();
        // Skip widths of b4, b3, b2.
        let skips = [config.scaled(512), config.scaled(256), config.scaled(128)];
        let mut up_channels = config.scaled(512);
        let stages = DECODER_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &(w1, w3))| {
                let name = format!("{prefix}.block{}", i + 1);
                let (c1, c3) = (config.scaled(w1), config.scaled(w3));
                let up = match config.upsample {
                    UpsampleMode::Nearest => Upsample::Nearest,
                    UpsampleMode::Transpose => Upsample::transpose(&format!("{prefix}.up{}", i + 1), up_channels),
                };
                let stage = Stage {
                    up,
                    convs: [
                        ConvBnRelu::new(&format!("{name}.c1"), up_channels + skips[i], c1, 1),
                        ConvBnRelu::new(&format!("{name}.c2"), c1, c3, 3),
                    ],
                    up_channels,
                    name,
                };
                up_channels = c3;
                stage
            })
            .collect();
        DecoderBranch { kind, stages }
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map(|s| s.convs[1].out_channels()).unwrap_or(0)
    }

    /// Width of block 1's input (up(b5) ++ b4).
    pub fn block1_in_channels(&self) -> usize {
        self.stages[0].convs[0].conv.weight.value.shape().c
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for s in &mut self.stages {
            s.convs.iter_mut().for_each(|c| c.set_mode(mode));
        }
    }

    fn skips(taps: &EncoderTaps<T>) -> [&Tensor4<T>; 3] {
        [&taps.b4_c3, &taps.b3_c3, &taps.b2_c2]
    }

    pub fn infer(&self, taps: &EncoderTaps<T>) -> Result<Tensor4<T>> {
        let mut h = taps.b5_c3.clone();
        for (stage, skip) in self.stages.iter().zip(Self::skips(taps)) {
            let up = stage.up.infer(&h)?;
            h = tensor::concat_channels_named(&format!("{}.concat", stage.name), &up, skip)?;
            for conv in &stage.convs {
                h = conv.infer(&h)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&mut self, taps: &EncoderTaps<T>) -> Result<Tensor4<T>> {
        let mut h = taps.b5_c3.clone();
        let skips = Self::skips(taps);
        for (stage, skip) in self.stages.iter_mut().zip(skips) {
            let up = stage.up.forward(h)?;
            h = tensor::concat_channels_named(&format!("{}.concat", stage.name), &up, skip)?;
            for conv in stage.convs.iter_mut() {
                h = conv.forward(h)?;
            }
        }
        Ok(h)
    }

    /// Returns the gradients w.r.t. the four taps.
    pub fn backward(&mut self, grad: &Tensor4<T>) -> Result<EncoderTaps<T>> {
        let mut g = grad.clone();
        let mut skip_grads = Vec::with_capacity(3);
        for stage in self.stages.iter_mut().rev() {
            for conv in stage.convs.iter_mut().rev() {
                g = conv.backward(&g, true)?.expect("input gradient requested");
            }
            let (g_up, g_skip) = tensor::split_channels(&g, stage.up_channels)?;
            skip_grads.push(g_skip);
            g = stage.up.backward(&g_up)?;
        }
        // skip_grads is ordered b2, b3, b4.
        let b4_c3 = skip_grads.pop().expect("three stages");
        let b3_c3 = skip_grads.pop().expect("three stages");
        let b2_c2 = skip_grads.pop().expect("three stages");
        Ok(EncoderTaps { b2_c2, b3_c3, b4_c3, b5_c3: g })
    }

    pub(crate) fn hash_pattern(&self, h: &mut impl Hasher) {
        self.stages.iter().flat_map(|s| &s.convs).for_each(|c| c.hash_pattern(h));
    }
}

impl<T: Scalar> Module<T> for DecoderBranch<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for s in &self.stages {
            s.up.visit(f);
            s.convs.iter().for_each(|c| c.visit(f));
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for s in &mut self.stages {
            s.up.visit_mut(f);
            s.convs.iter_mut().for_each(|c| c.visit_mut(f));
        }
    }
}
