//! Rank-4 tensors and the differentiable primitives the network is built from.
//!
//! Every op comes as a forward function plus an explicit backward function
//! taking the upstream gradient. Layers in [`crate::model`] cache whatever the
//! backward pass needs. All ops are generic over [`Scalar`], so the same code
//! runs in `f32` for training and `f64` for gradient verification.

mod conv;
mod elementwise;
mod norm;
mod pool;

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use conv::{
    conv2d, conv2d_backward, transpose_conv2d, transpose_conv2d_backward, ConvGrads,
    TransposeConvGrads,
};
pub use elementwise::{
    concat_channels, mul_broadcast, mul_broadcast_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, slice_channels, split_channels,
};
pub(crate) use elementwise::concat_channels_named;
pub use norm::{batchnorm2d, batchnorm2d_backward, batchnorm2d_infer, BatchNormCache, BatchNormState, Mode};
pub use pool::{avgpool2x2, maxpool2x2, maxpool2x2_backward, nn_upsample2x, nn_upsample2x_backward};

use crate::error::{Error, Result};

/// Floating-point element type of a tensor.
pub trait Scalar:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given dims and strides must be in
    /// bounds of the corresponding pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix product `c (m x n) = a (m x k) * b (k x n) + beta * c`.
///
/// `lda`/`ldb`/`ldc` are row strides. With `a_t` set, `a` holds the operand
/// transposed (a `k x m` block with row stride `lda`); likewise `b_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    lda: usize,
    a_t: bool,
    b: &[T],
    ldb: usize,
    b_t: bool,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, ld: usize| if rows == 0 || cols == 0 { 0 } else { (rows - 1) * ld + cols };
    let (ar, ac) = if a_t { (k, m) } else { (m, k) };
    let (br, bc) = if b_t { (n, k) } else { (k, n) };
    assert!(a.len() >= extent(ar, ac, lda), "matmul: lhs too short");
    assert!(b.len() >= extent(br, bc, ldb), "matmul: rhs too short");
    assert!(c.len() >= extent(m, n, ldc), "matmul: output too short");
    let (rsa, csa) = if a_t { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if b_t { (1, ldb as isize) } else { (ldb as isize, 1) };
    // SAFETY: the asserts above bound every strided access.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Tensor dimensions: batch, channels, rows, cols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

pub(crate) fn expect_axis(op: &str, axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            op: op.to_string(),
            axis,
            expected,
            actual,
        })
    }
}

/// Dense row-major `(n, c, h, w)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        expect_axis("Tensor4::from_vec", "len", shape.len(), data.len())?;
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous `(c, h, w)` block of one batch entry.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape.sample();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape.sample();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor4::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, location: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                location: location.to_string(),
            })
        }
    }

    pub fn add_assign(&mut self, other: &Tensor4<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "Tensor4::add_assign".into(),
                axis: "shape",
                expected: self.len(),
                actual: other.len(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Mirror along the width axis.
    pub fn flip_horizontal(&self) -> Self {
        let s = self.shape;
        Tensor4::from_fn(s, |n, c, y, x| self.at(n, c, y, s.w - 1 - x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Persistent state (e.g. running statistics) that is checkpointed but
    /// never receives gradients.
    Buffer,
}

/// A named tensor with an accumulated gradient.
///
/// Rank-1 parameters are stored as `(len, 1, 1, 1)` tensors; `rank` records
/// the logical rank for serialization.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub kind: ParamKind,
    rank: u8,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor4<T>) -> Self {
        let grad = Tensor4::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
            kind: ParamKind::Trainable,
            rank: 4,
        }
    }

    pub fn vector(name: impl Into<String>, values: Vec<T>) -> Self {
        let len = values.len();
        let value = Tensor4 {
            shape: Shape::new(len, 1, 1, 1),
            data: values,
        };
        Parameter {
            rank: 1,
            ..Parameter::new(name, value)
        }
    }

    pub fn buffer(name: impl Into<String>, values: Vec<T>) -> Self {
        Parameter {
            kind: ParamKind::Buffer,
            ..Parameter::vector(name, values)
        }
    }

    pub fn rank(&self) -> u8 {
        self.rank
    }

    pub fn dims(&self) -> Vec<usize> {
        let s = self.value.shape();
        let all = [s.n, s.c, s.h, s.w];
        all[..self.rank as usize].to_vec()
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate(&mut self, grad: &[T]) {
        assert_eq!(grad.len(), self.grad.len(), "gradient length for {}", self.name);
        for (g, &d) in self.grad.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
    }
}
