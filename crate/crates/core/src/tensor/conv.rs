//! Convolution and transposed convolution via im2col + GEMM.
//!
//! Both ops are cross-correlations (no kernel flip). Work is split per batch
//! sample; weight gradients are computed per sample and summed in sample
//! order so serial and parallel execution agree bit for bit.

use super::{expect_axis, matmul, Scalar, Shape, Tensor4};
use crate::error::{Error, Result};
use crate::parallel;

/// Upper bound on the number of elements in one im2col buffer. Large images
/// are processed in bands of output rows.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(op: &'static str, c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument {
                op,
                reason: "stride must be at least 1".into(),
            });
        }
        if kh == 0 || kw == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::InvalidArgument {
                op,
                reason: format!("kernel {kh}x{kw} does not fit input {h}x{w} with padding {pad}"),
            });
        }
        Ok(Geometry {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// The im2col matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.k() * self.ow).max(1)).clamp(1, self.oh)
    }

    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some(y * self.w + x)
    }

    /// Fill `col` (`k x (rows * ow)`) for output rows `[oy0, oy0 + rows)`.
    fn im2col<T: Scalar>(&self, src: &[T], oy0: usize, rows: usize, col: &mut [T]) {
        let span = rows * self.ow;
        for ci in 0..self.c {
            let plane = &src[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * span;
                    for r in 0..rows {
                        let oy = oy0 + r;
                        for ox in 0..self.ow {
                            col[row + r * self.ow + ox] = match self.source(oy, ox, ky, kx) {
                                Some(i) => plane[i],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `col` back into `dst`; inverse layout of [`Self::im2col`].
    fn col2im<T: Scalar>(&self, col: &[T], oy0: usize, rows: usize, dst: &mut [T]) {
        let span = rows * self.ow;
        for ci in 0..self.c {
            let plane = &mut dst[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * span;
                    for r in 0..rows {
                        let oy = oy0 + r;
                        for ox in 0..self.ow {
                            if let Some(i) = self.source(oy, ox, ky, kx) {
                                plane[i] += col[row + r * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn sum_in_order<T: Scalar>(len: usize, parts: impl IntoIterator<Item = Vec<T>>) -> Vec<T> {
    let mut total = vec![T::zero(); len];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

/// 2-D cross-correlation. `weight` has shape `(c_out, c_in, kh, kw)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let is = input.shape();
    let ws = weight.shape();
    expect_axis("conv2d", "in_channels", ws.c, is.c)?;
    if let Some(b) = bias {
        expect_axis("conv2d", "bias", ws.n, b.len())?;
    }
    let g = Geometry::new("conv2d", is.c, is.h, is.w, ws.h, ws.w, stride, padding)?;
    let c_out = ws.n;
    let p = g.positions();
    let out_shape = Shape::new(is.n, c_out, g.oh, g.ow);

    let samples = parallel::map_indexed(is.n, |n| {
        let src = input.sample(n);
        let mut out = vec![T::zero(); c_out * p];
        if g.is_pointwise() {
            matmul(c_out, g.k(), p, weight.data(), g.k(), false, src, p, false, T::zero(), &mut out, p);
        } else {
            let band = g.band_rows();
            let mut col = vec![T::zero(); g.k() * band * g.ow];
            let mut oy0 = 0;
            while oy0 < g.oh {
                let rows = band.min(g.oh - oy0);
                let span = rows * g.ow;
                g.im2col(src, oy0, rows, &mut col);
                matmul(
                    c_out,
                    g.k(),
                    span,
                    weight.data(),
                    g.k(),
                    false,
                    &col,
                    span,
                    false,
                    T::zero(),
                    &mut out[oy0 * g.ow..],
                    p,
                );
                oy0 += rows;
            }
        }
        if let Some(b) = bias {
            for (co, plane) in out.chunks_mut(p).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[co]);
            }
        }
        out
    });
    Tensor4::from_vec(out_shape, samples.concat())
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// Present when requested.
    pub input: Option<Tensor4<T>>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor4<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let is = input.shape();
    let ws = weight.shape();
    expect_axis("conv2d_backward", "in_channels", ws.c, is.c)?;
    let g = Geometry::new("conv2d_backward", is.c, is.h, is.w, ws.h, ws.w, stride, padding)?;
    let gs = grad_out.shape();
    expect_axis("conv2d_backward", "batch", is.n, gs.n)?;
    expect_axis("conv2d_backward", "out_channels", ws.n, gs.c)?;
    expect_axis("conv2d_backward", "height", g.oh, gs.h)?;
    expect_axis("conv2d_backward", "width", g.ow, gs.w)?;

    let c_out = ws.n;
    let k = g.k();
    let p = g.positions();

    let per_sample = parallel::map_indexed(is.n, |n| {
        let src = input.sample(n);
        let gout = grad_out.sample(n);
        let mut gw = vec![T::zero(); c_out * k];
        let mut gin = if need_input { vec![T::zero(); is.sample()] } else { Vec::new() };
        if g.is_pointwise() {
            matmul(c_out, p, k, gout, p, false, src, p, true, T::zero(), &mut gw, k);
            if need_input {
                matmul(k, c_out, p, weight.data(), k, true, gout, p, false, T::zero(), &mut gin, p);
            }
        } else {
            let band = g.band_rows();
            let mut col = vec![T::zero(); k * band * g.ow];
            let mut gcol = vec![T::zero(); if need_input { k * band * g.ow } else { 0 }];
            let mut oy0 = 0;
            while oy0 < g.oh {
                let rows = band.min(g.oh - oy0);
                let span = rows * g.ow;
                let gchunk = &gout[oy0 * g.ow..];
                g.im2col(src, oy0, rows, &mut col);
                matmul(c_out, span, k, gchunk, p, false, &col, span, true, T::one(), &mut gw, k);
                if need_input {
                    matmul(k, c_out, span, weight.data(), k, true, gchunk, p, false, T::zero(), &mut gcol, span);
                    g.col2im(&gcol, oy0, rows, &mut gin);
                }
                oy0 += rows;
            }
        }
        let gb: Vec<T> = gout
            .chunks(p)
            .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        (gin, gw, gb)
    });

    let mut gin_all = Vec::with_capacity(if need_input { is.len() } else { 0 });
    let mut gws = Vec::with_capacity(is.n);
    let mut gbs = Vec::with_capacity(is.n);
    for (gin, gw, gb) in per_sample {
        gin_all.extend(gin);
        gws.push(gw);
        gbs.push(gb);
    }
    Ok(ConvGrads {
        input: if need_input { Some(Tensor4::from_vec(is, gin_all)?) } else { None },
        weight: Tensor4::from_vec(ws, sum_in_order(ws.len(), gws))?,
        bias: sum_in_order(c_out, gbs),
    })
}

/// Fractionally-strided convolution without padding. `weight` has shape
/// `(c_in, c_out, kh, kw)`; output spatial size is `(h - 1) * stride + kh`.
pub fn transpose_conv2d<T: Scalar>(input: &Tensor4<T>, weight: &Tensor4<T>, stride: usize) -> Result<Tensor4<T>> {
    let is = input.shape();
    let ws = weight.shape();
    expect_axis("transpose_conv2d", "in_channels", ws.n, is.c)?;
    if stride == 0 {
        return Err(Error::InvalidArgument {
            op: "transpose_conv2d",
            reason: "stride must be at least 1".into(),
        });
    }
    let (oh, ow) = ((is.h.max(1) - 1) * stride + ws.h, (is.w.max(1) - 1) * stride + ws.w);
    // The output seen as the input of a regular strided conv whose output
    // grid is this op's input grid.
    let g = Geometry::new("transpose_conv2d", ws.c, oh, ow, ws.h, ws.w, stride, 0)?;
    debug_assert_eq!((g.oh, g.ow), (is.h, is.w));
    let k = g.k();
    let p = is.h * is.w;
    let out_shape = Shape::new(is.n, ws.c, oh, ow);

    let samples = parallel::map_indexed(is.n, |n| {
        let mut col = vec![T::zero(); k * p];
        matmul(k, is.c, p, weight.data(), k, true, input.sample(n), p, false, T::zero(), &mut col, p);
        let mut out = vec![T::zero(); out_shape.sample()];
        g.col2im(&col, 0, g.oh, &mut out);
        out
    });
    Tensor4::from_vec(out_shape, samples.concat())
}

#[derive(Clone, Debug)]
pub struct TransposeConvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
}

pub fn transpose_conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    stride: usize,
    grad_out: &Tensor4<T>,
) -> Result<TransposeConvGrads<T>> {
    let is = input.shape();
    let ws = weight.shape();
    expect_axis("transpose_conv2d_backward", "in_channels", ws.n, is.c)?;
    let gs = grad_out.shape();
    expect_axis("transpose_conv2d_backward", "batch", is.n, gs.n)?;
    expect_axis("transpose_conv2d_backward", "out_channels", ws.c, gs.c)?;
    let g = Geometry::new("transpose_conv2d_backward", ws.c, gs.h, gs.w, ws.h, ws.w, stride, 0)?;
    expect_axis("transpose_conv2d_backward", "height", is.h, g.oh)?;
    expect_axis("transpose_conv2d_backward", "width", is.w, g.ow)?;
    let k = g.k();
    let p = is.h * is.w;

    let per_sample = parallel::map_indexed(is.n, |n| {
        let mut col = vec![T::zero(); k * p];
        g.im2col(grad_out.sample(n), 0, g.oh, &mut col);
        let mut gin = vec![T::zero(); is.sample()];
        matmul(is.c, k, p, weight.data(), k, false, &col, p, false, T::zero(), &mut gin, p);
        let mut gw = vec![T::zero(); ws.len()];
        matmul(is.c, p, k, input.sample(n), p, false, &col, p, true, T::zero(), &mut gw, k);
        (gin, gw)
    });
    let (gins, gws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    Ok(TransposeConvGrads {
        input: Tensor4::from_vec(is, gins.concat())?,
        weight: Tensor4::from_vec(ws, sum_in_order(ws.len(), gws))?,
    })
}
