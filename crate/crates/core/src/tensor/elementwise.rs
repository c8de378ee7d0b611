use std::ops::Range;

use super::{expect_axis, Scalar, Shape, Tensor4};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of [`relu`] given its forward *output*.
pub fn relu_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut g = grad_out.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *d = T::zero();
        }
    }
    g
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Backward of [`sigmoid`] given its forward *output*.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut g = grad_out.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *d *= y * (T::one() - y);
    }
    g
}

/// Stack `a` then `b` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    concat_channels_named("concat_channels", a, b)
}

pub(crate) fn concat_channels_named<T: Scalar>(op: &str, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    expect_axis(op, "batch", sa.n, sb.n)?;
    expect_axis(op, "height", sa.h, sb.h)?;
    expect_axis(op, "width", sa.w, sb.w)?;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Tensor4::from_vec(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)
}

/// Copy out channels `range` of `x`.
pub fn slice_channels<T: Scalar>(x: &Tensor4<T>, range: Range<usize>) -> Result<Tensor4<T>> {
    let s = x.shape();
    if range.start > range.end || range.end > s.c {
        return Err(Error::Dimension {
            op: "slice_channels".into(),
            axis: "channels",
            expected: s.c,
            actual: range.end,
        });
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * range.len() * plane);
    for n in 0..s.n {
        data.extend_from_slice(&x.sample(n)[range.start * plane..range.end * plane]);
    }
    Tensor4::from_vec(Shape::new(s.n, range.len(), s.h, s.w), data)
}

/// Backward of [`concat_channels`]: split the gradient at channel `first`.
pub fn split_channels<T: Scalar>(grad: &Tensor4<T>, first: usize) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let c = grad.shape().c;
    Ok((slice_channels(grad, 0..first)?, slice_channels(grad, first..c)?))
}

fn check_gate<T: Scalar>(x: &Tensor4<T>, gate: &Tensor4<T>) -> Result<()> {
    let (sx, sg) = (x.shape(), gate.shape());
    expect_axis("mul_broadcast", "gate_channels", 1, sg.c)?;
    expect_axis("mul_broadcast", "batch", sx.n, sg.n)?;
    expect_axis("mul_broadcast", "height", sx.h, sg.h)?;
    expect_axis("mul_broadcast", "width", sx.w, sg.w)
}

/// Multiply the single-channel `gate` into every channel of `x`.
pub fn mul_broadcast<T: Scalar>(x: &Tensor4<T>, gate: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_gate(x, gate)?;
    let s = x.shape();
    let plane = s.plane();
    let mut out = x.clone();
    for n in 0..s.n {
        let g = gate.sample(n);
        for ch in out.sample_mut(n).chunks_mut(plane) {
            for (v, &gv) in ch.iter_mut().zip(g) {
                *v *= gv;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_gate)`; the gate gradient sums `x * grad_out`
/// over channels.
pub fn mul_broadcast_backward<T: Scalar>(
    x: &Tensor4<T>,
    gate: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    check_gate(x, gate)?;
    if grad_out.shape() != x.shape() {
        return Err(Error::Dimension {
            op: "mul_broadcast_backward".into(),
            axis: "shape",
            expected: x.len(),
            actual: grad_out.len(),
        });
    }
    let grad_x = mul_broadcast(grad_out, gate)?;
    let s = x.shape();
    let plane = s.plane();
    let mut grad_gate = Tensor4::zeros(gate.shape());
    for n in 0..s.n {
        let xs = x.sample(n);
        let gs = grad_out.sample(n);
        let dst = grad_gate.sample_mut(n);
        for c in 0..s.c {
            let r = c * plane..(c + 1) * plane;
            for ((d, &xv), &gv) in dst.iter_mut().zip(&xs[r.clone()]).zip(&gs[r]) {
                *d += xv * gv;
            }
        }
    }
    Ok((grad_x, grad_gate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_sigmoid_values() {
        let x = Tensor4::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(&x).data()[1], 0.5);
    }

    #[test]
    fn unit_gate_is_identity() {
        let x = Tensor4::from_fn(Shape::new(2, 3, 2, 2), |n, c, y, x| (n + c * 2 + y * 3 + x) as f32 - 4.0);
        let gate = Tensor4::full(Shape::new(2, 1, 2, 2), 1.0f32);
        assert_eq!(mul_broadcast(&x, &gate).unwrap(), x);
    }

    #[test]
    fn gate_with_two_channels_rejected() {
        let x = Tensor4::<f32>::zeros(Shape::new(1, 3, 2, 2));
        let gate = Tensor4::<f32>::zeros(Shape::new(1, 2, 2, 2));
        assert!(matches!(
            mul_broadcast(&x, &gate),
            Err(Error::Dimension { axis: "gate_channels", .. })
        ));
    }

    #[test]
    fn concat_then_split_recovers_inputs() {
        let a = Tensor4::from_fn(Shape::new(2, 2, 3, 3), |n, c, y, x| (n * 100 + c * 10 + y * 3 + x) as f64 * 0.1);
        let b = Tensor4::from_fn(Shape::new(2, 3, 3, 3), |n, c, y, x| -((n * 100 + c * 10 + y * 3 + x) as f64) / 7.0);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), Shape::new(2, 5, 3, 3));
        let (ra, rb) = split_channels(&ab, 2).unwrap();
        assert_eq!(ra, a);
        assert_eq!(rb, b);
    }

    #[test]
    fn concat_height_mismatch() {
        let a = Tensor4::<f32>::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor4::<f32>::zeros(Shape::new(1, 1, 2, 4));
        assert!(matches!(concat_channels(&a, &b), Err(Error::Dimension { axis: "height", .. })));
    }
}
