//! Spatial batch normalization.

use super::{expect_axis, Parameter, Scalar, Shape, Tensor4};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel affine parameters plus running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormState<T> {
    pub gamma: Parameter<T>,
    pub shift: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    /// Identity affine, zero mean / unit variance running stats.
    pub fn new(prefix: &str, channels: usize) -> Self {
        BatchNormState {
            gamma: Parameter::vector(format!("{prefix}.gamma"), vec![T::one(); channels]),
            shift: Parameter::vector(format!("{prefix}.beta"), vec![T::zero(); channels]),
            running_mean: Parameter::buffer(format!("{prefix}.running_mean"), vec![T::zero(); channels]),
            running_var: Parameter::buffer(format!("{prefix}.running_var"), vec![T::one(); channels]),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    mode: Mode,
    normalized: Tensor4<T>,
    inv_std: Vec<T>,
}

/// Normalize per channel. In training mode the batch statistics are used and
/// the running statistics are updated (`running_var` takes the unbiased
/// estimate); in eval mode the running statistics are used.
pub fn batchnorm2d<T: Scalar>(input: &Tensor4<T>, state: &mut BatchNormState<T>) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    let s = input.shape();
    expect_axis("batchnorm2d", "channels", state.channels(), s.c)?;
    if state.eps <= 0.0 {
        return Err(Error::InvalidArgument {
            op: "batchnorm2d",
            reason: "eps must be positive".into(),
        });
    }
    let count = s.n * s.plane();
    let eps = T::from_f64(state.eps);
    let (mean, var) = match state.mode {
        Mode::Train => {
            if count == 0 {
                return Err(Error::EmptyBatch { op: "batchnorm2d" });
            }
            let (mean, var) = channel_moments(input);
            let m = T::from_f64(state.momentum);
            let unbias = if count > 1 {
                T::from_f64(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            let rm = state.running_mean.value.data_mut();
            for (r, &v) in rm.iter_mut().zip(&mean) {
                *r = (T::one() - m) * *r + m * v;
            }
            let rv = state.running_var.value.data_mut();
            for (r, &v) in rv.iter_mut().zip(&var) {
                *r = (T::one() - m) * *r + m * v * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (
            state.running_mean.value.data().to_vec(),
            state.running_var.value.data().to_vec(),
        ),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gamma = state.gamma.value.data();
    let shift = state.shift.value.data();

    let mut normalized = Tensor4::zeros(s);
    let mut out = Tensor4::zeros(s);
    let plane = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let src = &input.data()[base..base + plane];
            let xn = &mut normalized.data_mut()[base..base + plane];
            for (d, &x) in xn.iter_mut().zip(src) {
                *d = (x - mean[c]) * inv_std[c];
            }
            let y = &mut out.data_mut()[base..base + plane];
            for (d, &x) in y.iter_mut().zip(&normalized.data()[base..base + plane]) {
                *d = gamma[c] * x + shift[c];
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            mode: state.mode,
            normalized,
            inv_std,
        },
    ))
}

/// Eval-mode normalization with the running statistics; never mutates state.
pub fn batchnorm2d_infer<T: Scalar>(input: &Tensor4<T>, state: &BatchNormState<T>) -> Result<Tensor4<T>> {
    let s = input.shape();
    expect_axis("batchnorm2d", "channels", state.channels(), s.c)?;
    let eps = T::from_f64(state.eps);
    let mean = state.running_mean.value.data();
    let var = state.running_var.value.data();
    let gamma = state.gamma.value.data();
    let shift = state.shift.value.data();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let plane = s.plane();
    let mut out = input.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.c;
        for v in chunk.iter_mut() {
            *v = gamma[c] * ((*v - mean[c]) * inv_std[c]) + shift[c];
        }
    }
    Ok(out)
}

/// Biased per-channel mean and variance over batch and space.
fn channel_moments<T: Scalar>(input: &Tensor4<T>) -> (Vec<T>, Vec<T>) {
    let s = input.shape();
    let plane = s.plane();
    let count = T::from_f64((s.n * plane) as f64);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            acc = input.data()[base..base + plane].iter().fold(acc, |a, &v| a + v);
        }
        mean[c] = acc / count;
        let mut sq = T::zero();
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            sq = input.data()[base..base + plane].iter().fold(sq, |a, &v| {
                let d = v - mean[c];
                a + d * d
            });
        }
        var[c] = sq / count;
    }
    (mean, var)
}

/// Backward through batch normalization. Accumulates into the gamma and
/// shift gradients and returns the input gradient. In training mode the
/// dependence of the batch statistics on the input is differentiated
/// exactly.
pub fn batchnorm2d_backward<T: Scalar>(
    state: &mut BatchNormState<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let s: Shape = grad_out.shape();
    if s != cache.normalized.shape() {
        return Err(Error::Dimension {
            op: "batchnorm2d_backward".into(),
            axis: "shape",
            expected: cache.normalized.len(),
            actual: grad_out.len(),
        });
    }
    let plane = s.plane();
    let count = T::from_f64((s.n * plane) as f64);
    let gamma = state.gamma.value.data().to_vec();
    let mut dgamma = vec![T::zero(); s.c];
    let mut dshift = vec![T::zero(); s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            let g = &grad_out.data()[base..base + plane];
            let xn = &cache.normalized.data()[base..base + plane];
            for (&gv, &xv) in g.iter().zip(xn) {
                dshift[c] += gv;
                dgamma[c] += gv * xv;
            }
        }
    }
    let mut grad_in = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let scale = gamma[c] * cache.inv_std[c];
            let g = &grad_out.data()[base..base + plane];
            let xn = &cache.normalized.data()[base..base + plane];
            let dst = &mut grad_in.data_mut()[base..base + plane];
            match cache.mode {
                Mode::Train => {
                    let mean_g = dshift[c] / count;
                    let mean_gx = dgamma[c] / count;
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xn) {
                        *d = scale * (gv - mean_g - xv * mean_gx);
                    }
                }
                Mode::Eval => {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d = scale * gv;
                    }
                }
            }
        }
    }
    state.gamma.accumulate(&dgamma);
    state.shift.accumulate(&dshift);
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_standardizes() {
        // Per channel: values {3, 7} repeated, so mean 5 and variance 4.
        let x = Tensor4::<f64>::from_fn(Shape::new(2, 2, 2, 2), |n, _, y, x| {
            
            if (n + y + x) % 2 == 0 { 3.0 } else { 7.0 }
        });
        let mut st = BatchNormState::new("bn", 2);
        let (y, _) = batchnorm2d(&x, &mut st).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| (0..4).map(move |i| (n, i)))
                .map(|(n, i)| y.at(n, c, i / 2, i % 2))
                .collect();
            let mean = vals.iter().sum::<f64>() / 8.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 4.0 / (4.0 + DEFAULT_EPS)).abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
        // running stats moved by momentum toward (5, 4 * 8/7)
        assert!((st.running_mean.value.data()[0] - 0.5).abs() < 1e-12);
        assert!((st.running_var.value.data()[0] - (0.9 + 0.1 * 4.0 * 8.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_with_unit_stats_is_identity() {
        let x = Tensor4::<f64>::from_fn(Shape::new(1, 3, 2, 2), |_, c, y, x| (c * 4 + y * 2 + x) as f64 - 3.0);
        let mut st = BatchNormState::new("bn", 3);
        st.mode = Mode::Eval;
        let (y, _) = batchnorm2d(&x, &mut st).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= b.abs() * 1e-5);
        }
    }

    #[test]
    fn empty_batch_is_error() {
        let x = Tensor4::<f32>::zeros(Shape::new(0, 2, 3, 3));
        let mut st = BatchNormState::new("bn", 2);
        assert!(matches!(batchnorm2d(&x, &mut st), Err(Error::EmptyBatch { .. })));
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor4::<f32>::zeros(Shape::new(1, 2, 3, 3));
        let mut st = BatchNormState::new("bn", 3);
        assert!(matches!(batchnorm2d(&x, &mut st), Err(Error::Dimension { axis: "channels", .. })));
    }
}
