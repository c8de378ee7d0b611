//! Stateful layers: each caches what its backward pass needs during a
//! training forward, and offers a read-only `infer` for evaluation.

use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::tensor::{
    self, BatchNormCache, BatchNormState, Mode, Parameter, Scalar, Shape, Tensor4,
};

/// Anything that owns parameters.
pub trait Module<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>));
}

fn missing_cache(layer: &str) -> Error {
    Error::InvalidArgument {
        op: "backward",
        reason: format!("layer `{layer}` has no cached forward pass"),
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub name: String,
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
    input: Option<Tensor4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Square kernel with "same" padding for odd `kernel` at stride 1.
    pub fn new(name: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        Conv2d {
            name: name.to_string(),
            weight: Parameter::new(format!("{name}.weight"), Tensor4::zeros(Shape::new(c_out, c_in, kernel, kernel))),
            bias: Parameter::vector(format!("{name}.bias"), vec![T::zero(); c_out]),
            stride: 1,
            padding: kernel / 2,
            input: None,
        }
    }

    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = tensor::conv2d(x, &self.weight.value, Some(self.bias.value.data()), self.stride, self.padding)
            .map_err(|e| relabel(e, &self.name))?;
        y.ensure_finite(&self.name)?;
        Ok(y)
    }

    pub fn forward(&mut self, x: Tensor4<T>) -> Result<Tensor4<T>> {
        let y = self.infer(&x)?;
        self.input = Some(x);
        Ok(y)
    }

    /// Accumulates weight/bias gradients; returns the input gradient when
    /// `need_input` is set.
    pub fn backward(&mut self, grad: &Tensor4<T>, need_input: bool) -> Result<Option<Tensor4<T>>> {
        let input = self.input.take().ok_or_else(|| missing_cache(&self.name))?;
        let g = tensor::conv2d_backward(&input, &self.weight.value, self.stride, self.padding, grad, need_input)?;
        self.weight.accumulate(g.weight.data());
        self.bias.accumulate(&g.bias);
        Ok(g.input)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

fn relabel(e: Error, layer: &str) -> Error {
    match e {
        Error::Dimension { op, axis, expected, actual } => Error::Dimension {
            op: format!("{layer} ({op})"),
            axis,
            expected,
            actual,
        },
        other => other,
    }
}

/// conv -> batchnorm -> relu, the unit every encoder and decoder block is
/// made of.
#[derive(Clone, Debug)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNormState<T>,
    bn_cache: Option<BatchNormCache<T>>,
    output: Option<Tensor4<T>>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(name: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(name, c_in, c_out, kernel),
            bn: BatchNormState::new(&format!("{name}.bn"), c_out),
            bn_cache: None,
            output: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.conv.name
    }

    pub fn out_channels(&self) -> usize {
        self.bn.channels()
    }

    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = self.conv.infer(x)?;
        let y = tensor::relu(&tensor::batchnorm2d_infer(&y, &self.bn)?);
        y.ensure_finite(self.name())?;
        Ok(y)
    }

    pub fn forward(&mut self, x: Tensor4<T>) -> Result<Tensor4<T>> {
        let y = self.conv.forward(x)?;
        let (y, cache) = tensor::batchnorm2d(&y, &mut self.bn)?;
        let y = tensor::relu(&y);
        y.ensure_finite(self.name())?;
        self.bn_cache = Some(cache);
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor4<T>, need_input: bool) -> Result<Option<Tensor4<T>>> {
        let out = self.output.take().ok_or_else(|| missing_cache(&self.conv.name))?;
        let cache = self.bn_cache.take().ok_or_else(|| missing_cache(&self.conv.name))?;
        let g = tensor::relu_backward(&out, grad);
        let g = tensor::batchnorm2d_backward(&mut self.bn, &cache, &g)?;
        self.conv.backward(&g, need_input)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.bn.mode = mode;
    }

    pub(crate) fn hash_pattern(&self, h: &mut impl Hasher) {
        if let Some(out) = &self.output {
            hash_signs(out, h);
        }
    }
}

/// Feeds the positivity mask of `t` into `h`, 64 entries per word.
pub(crate) fn hash_signs<T: Scalar>(t: &Tensor4<T>, h: &mut impl Hasher) {
    for chunk in t.data().chunks(64) {
        let word = chunk
            .iter()
            .enumerate()
            .fold(0u64, |w, (i, &v)| if v > T::zero() { w | (1 << i) } else { w });
        h.write_u64(word);
    }
}

impl<T: Scalar> Module<T> for ConvBnRelu<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.conv.visit(f);
        f(&self.bn.gamma);
        f(&self.bn.shift);
        f(&self.bn.running_mean);
        f(&self.bn.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.conv.visit_mut(f);
        f(&mut self.bn.gamma);
        f(&mut self.bn.shift);
        f(&mut self.bn.running_mean);
        f(&mut self.bn.running_var);
    }
}

/// 2x spatial upsampling: parameter-free nearest neighbour, or a learned
/// channel-preserving 2x2 / stride-2 transposed convolution.
#[derive(Clone, Debug)]
pub enum Upsample<T> {
    Nearest,
    Transpose {
        weight: Parameter<T>,
        input: Option<Tensor4<T>>,
    },
}

impl<T: Scalar> Upsample<T> {
    pub fn transpose(name: &str, channels: usize) -> Self {
        Upsample::Transpose {
            weight: Parameter::new(format!("{name}.weight"), Tensor4::zeros(Shape::new(channels, channels, 2, 2))),
            input: None,
        }
    }

    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Upsample::Nearest => Ok(tensor::nn_upsample2x(x)),
            Upsample::Transpose { weight, .. } => tensor::transpose_conv2d(x, &weight.value, 2),
        }
    }

    pub fn forward(&mut self, x: Tensor4<T>) -> Result<Tensor4<T>> {
        let y = self.infer(&x)?;
        if let Upsample::Transpose { input, .. } = self {
            *input = Some(x);
        }
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Upsample::Nearest => tensor::nn_upsample2x_backward(grad),
            Upsample::Transpose { weight, input } => {
                let x = input.take().ok_or_else(|| missing_cache(&weight.name))?;
                let g = tensor::transpose_conv2d_backward(&x, &weight.value, 2, grad)?;
                weight.accumulate(g.weight.data());
                Ok(g.input)
            }
        }
    }
}

impl<T: Scalar> Module<T> for Upsample<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        if let Upsample::Transpose { weight, .. } = self {
            f(weight);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        if let Upsample::Transpose { weight, .. } = self {
            f(weight);
        }
    }
}
