use super::{Scalar, Shape, Tensor4};
use crate::error::{Error, Result};

fn require_even(op: &'static str, s: Shape) -> Result<()> {
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::OddSpatial { op, h: s.h, w: s.w });
    }
    Ok(())
}

/// Non-overlapping 2x2 max pooling. Returns the output and, for each output
/// element, the flat input index it was taken from. Ties resolve to the
/// first position in row-major order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = input.shape();
    require_even("maxpool2x2", s)?;
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Tensor4::zeros(os);
    let mut argmax = vec![0usize; os.len()];
    let data = input.data();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut best = base + 2 * oy * s.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.data_mut()[o] = data[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(input_shape: Shape, argmax: &[usize], grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    super::expect_axis("maxpool2x2_backward", "len", argmax.len(), grad_out.len())?;
    let mut grad = Tensor4::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        grad.data_mut()[i] += g;
    }
    Ok(grad)
}

/// Replicates each pixel into a 2x2 block.
pub fn nn_upsample2x<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let mut out = Tensor4::zeros(os);
    let src = input.data();
    let dst = out.data_mut();
    for nc in 0..s.n * s.c {
        for y in 0..s.h {
            let row = &src[nc * s.plane() + y * s.w..nc * s.plane() + (y + 1) * s.w];
            for dy in 0..2 {
                let o = nc * os.plane() + (2 * y + dy) * os.w;
                for (x, &v) in row.iter().enumerate() {
                    dst[o + 2 * x] = v;
                    dst[o + 2 * x + 1] = v;
                }
            }
        }
    }
    out
}

/// Each input position receives the sum of the four output gradients it fed.
pub fn nn_upsample2x_backward<T: Scalar>(grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    sum_pool(grad_out, "nn_upsample2x_backward")
}

/// 2x2 average pooling, summed pairwise so that it exactly inverts
/// [`nn_upsample2x`].
pub fn avgpool2x2<T: Scalar>(input: &Tensor4<T>) -> Result<Tensor4<T>> {
    let quarter = T::from_f64(0.25);
    Ok(sum_pool(input, "avgpool2x2")?.map(|v| v * quarter))
}

fn sum_pool<T: Scalar>(input: &Tensor4<T>, op: &'static str) -> Result<Tensor4<T>> {
    let s = input.shape();
    require_even(op, s)?;
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let src = input.data();
    let mut out = Tensor4::zeros(os);
    let dst = out.data_mut();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let i = base + 2 * oy * s.w + 2 * ox;
                dst[o] = (src[i] + src[i + 1]) + (src[i + s.w] + src[i + s.w + 1]);
                o += 1;
            }
        }
    }
    Ok(out)
}
