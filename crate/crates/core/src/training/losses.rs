//! Pixel-averaged losses. Values are accumulated in f64; gradients come
//! back in the prediction's precision.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub const DEFAULT_ALPHA: f64 = 1000.0;
pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_BCE_EPS: f64 = 1e-7;

fn check_shapes<T: Scalar>(op: &'static str, pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::InvalidArgument {
            op,
            reason: format!("prediction {} vs target {}", pred.shape(), target.shape()),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument {
            op,
            reason: "empty tensors".into(),
        });
    }
    Ok(())
}

/// Mean squared error over every element, with gradient `2 (y - t) / N`.
pub fn mse_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    check_shapes("mse_loss", pred, target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Tensor4::zeros(pred.shape());
    for ((g, &y), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = y.as_f64() - t.as_f64();
        sum += d * d;
        *g = T::from_f64(2.0 * d / n);
    }
    Ok((sum / n, grad))
}

/// Binary cross-entropy, `-(1/N) sum [t ln y + (1 - t) ln(1 - y)]`, with the
/// prediction clamped to `[eps, 1 - eps]`. Where the clamp is active the
/// gradient is zero. Targets must be exactly 0 or 1.
pub fn bce_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>, eps: f64) -> Result<(f64, Tensor4<T>)> {
    check_shapes("bce_loss", pred, target)?;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidArgument {
            op: "bce_loss",
            reason: format!("clamp eps {eps} outside (0, 0.5)"),
        });
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Tensor4::zeros(pred.shape());
    for (i, ((g, &y), &t)) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()).enumerate() {
        let t = t.as_f64();
        if t != 0.0 && t != 1.0 {
            return Err(Error::InvalidTarget { index: i, value: t });
        }
        let raw = y.as_f64();
        let yc = raw.clamp(eps, 1.0 - eps);
        sum -= if t == 1.0 { yc.ln() } else { (1.0 - yc).ln() };
        let d = if raw == yc { (yc - t) / (yc * (1.0 - yc) * n) } else { 0.0 };
        *g = T::from_f64(d);
    }
    Ok((sum / n, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub bce_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            bce_eps: DEFAULT_BCE_EPS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointLoss<T> {
    pub total: f64,
    pub mse: f64,
    /// Absent when there is no reinforcement output.
    pub bce: Option<f64>,
    pub grad_density: Tensor4<T>,
    pub grad_reinforcement: Option<Tensor4<T>>,
}

/// `alpha * mse + beta * bce`. Without a reinforcement prediction the BCE
/// term is dropped.
pub fn joint_loss<T: Scalar>(
    density: &Tensor4<T>,
    density_gt: &Tensor4<T>,
    reinforcement: Option<(&Tensor4<T>, &Tensor4<T>)>,
    weights: &LossWeights,
) -> Result<JointLoss<T>> {
    let (mse, gd) = mse_loss(density, density_gt)?;
    let alpha = T::from_f64(weights.alpha);
    let grad_density = gd.map(|g| g * alpha);
    let mut total = weights.alpha * mse;
    let (bce, grad_reinforcement) = match reinforcement {
        Some((pred, gt)) => {
            let (bce, gr) = bce_loss(pred, gt, weights.bce_eps)?;
            total += weights.beta * bce;
            let beta = T::from_f64(weights.beta);
            (Some(bce), Some(gr.map(|g| g * beta)))
        }
        None => (None, None),
    };
    Ok(JointLoss {
        total,
        mse,
        bce,
        grad_density,
        grad_reinforcement,
    })
}
