//! VGG16-bn feature stack (13 convolutions) exposing four skip taps.

use std::hash::{Hash, Hasher};

use super::layers::{ConvBnRelu, Module};
use super::WNetConfig;
use crate::error::Result;
use crate::tensor::{self, Mode, Parameter, Scalar, Shape, Tensor4};

/// Base channel widths of the five VGG blocks.
pub const ENCODER_WIDTHS: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];

/// Skip connections taken from the last conv of blocks 2 to 5, at 1/2, 1/4,
/// 1/8 and 1/16 of the input resolution.
#[derive(Clone, Debug)]
pub struct EncoderTaps<T> {
    pub b2_c2: Tensor4<T>,
    pub b3_c3: Tensor4<T>,
    pub b4_c3: Tensor4<T>,
    pub b5_c3: Tensor4<T>,
}

impl<T: Scalar> EncoderTaps<T> {
    fn add(&mut self, other: &EncoderTaps<T>) -> Result<()> {
        self.b2_c2.add_assign(&other.b2_c2)?;
        self.b3_c3.add_assign(&other.b3_c3)?;
        self.b4_c3.add_assign(&other.b4_c3)?;
        self.b5_c3.add_assign(&other.b5_c3)
    }

    pub(crate) fn accumulate(acc: &mut Option<EncoderTaps<T>>, grads: EncoderTaps<T>) -> Result<()> {
        match acc {
            Some(a) => a.add(&grads),
            None => {
                *acc = Some(grads);
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder<T> {
    blocks: Vec<Vec<ConvBnRelu<T>>>,
    /// Per pooling stage: input shape and argmax routing.
    pools: Vec<(Shape, Vec<usize>)>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: &WNetConfig) -> Self {
        let mut c_in = config.input_channels;
        let blocks = ENCODER_WIDTHS
            .iter()
            .enumerate()
            .map(|(b, widths)| {
                widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let c_out = config.scaled(w);
                        let layer = ConvBnRelu::new(&format!("encoder.b{}.c{}", b + 1, i + 1), c_in, c_out, 3);
                        c_in = c_out;
                        layer
                    })
                    .collect()
            })
            .collect();
        Encoder { blocks, pools: Vec::new() }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.blocks.iter_mut().flatten().for_each(|l| l.set_mode(mode));
    }

    pub fn infer(&self, x: &Tensor4<T>) -> Result<EncoderTaps<T>> {
        let mut outs = Vec::with_capacity(5);
        let mut h = x.clone();
        for (b, block) in self.blocks.iter().enumerate() {
            if b > 0 {
                h = tensor::maxpool2x2(&h)?.0;
            }
            for layer in block {
                h = layer.infer(&h)?;
            }
            outs.push(h.clone());
        }
        Ok(taps_from(outs))
    }

    pub fn forward(&mut self, x: Tensor4<T>) -> Result<EncoderTaps<T>> {
        self.pools.clear();
        let mut outs = Vec::with_capacity(5);
        let mut h = x;
        for (b, block) in self.blocks.iter_mut().enumerate() {
            if b > 0 {
                let (pooled, argmax) = tensor::maxpool2x2(&h)?;
                self.pools.push((h.shape(), argmax));
                h = pooled;
            }
            for layer in block.iter_mut() {
                h = layer.forward(h)?;
            }
            outs.push(h.clone());
        }
        Ok(taps_from(outs))
    }

    /// Back-propagate tap gradients through the stack. The input gradient is
    /// returned only when `need_input` is set.
    pub fn backward(&mut self, grads: EncoderTaps<T>, need_input: bool) -> Result<Option<Tensor4<T>>> {
        let mut tap_grads = [None, Some(grads.b2_c2), Some(grads.b3_c3), Some(grads.b4_c3), Some(grads.b5_c3)];
        let mut g: Option<Tensor4<T>> = None;
        for b in (0..self.blocks.len()).rev() {
            let mut cur = match (g.take(), tap_grads[b].take()) {
                (Some(mut acc), Some(tap)) => {
                    acc.add_assign(&tap)?;
                    acc
                }
                (Some(acc), None) => acc,
                (None, Some(tap)) => tap,
                (None, None) => unreachable!("block 5 always has a tap gradient"),
            };
            let block = &mut self.blocks[b];
            for (i, layer) in block.iter_mut().enumerate().rev() {
                let first = b == 0 && i == 0;
                match layer.backward(&cur, !first || need_input)? {
                    Some(next) => cur = next,
                    None => return Ok(None),
                }
            }
            if b > 0 {
                let (shape, argmax) = self.pools.pop().expect("pool cache per block");
                cur = tensor::maxpool2x2_backward(shape, &argmax, &cur)?;
            }
            g = Some(cur);
        }
        Ok(g)
    }

    pub(crate) fn hash_pattern(&self, h: &mut impl Hasher) {
        self.blocks.iter().flatten().for_each(|l| l.hash_pattern(h));
        for (_, argmax) in &self.pools {
            argmax.hash(h);
        }
    }
}

fn taps_from<T>(mut outs: Vec<Tensor4<T>>) -> EncoderTaps<T> {
    let b5_c3 = outs.pop().expect("five blocks");
    let b4_c3 = outs.pop().expect("five blocks");
    let b3_c3 = outs.pop().expect("five blocks");
    let b2_c2 = outs.pop().expect("five blocks");
    EncoderTaps { b2_c2, b3_c3, b4_c3, b5_c3 }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.blocks.iter().flatten().for_each(|l| l.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.blocks.iter_mut().flatten().for_each(|l| l.visit_mut(f));
    }
}
