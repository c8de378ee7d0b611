//! Adam with classic L2 weight decay: `wd * theta` is added to the gradient
//! before the moment updates.

use crate::error::{Error, Result};
use crate::model::{Module, NamedTensor, OptimizerState};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("adam eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// One bias-corrected update of a flat slice; `t` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    value: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    weight_decay: f64,
    p: &AdamParams,
) {
    debug_assert!(t >= 1);
    let c1 = 1.0 - p.beta1.powf(t as f64);
    let c2 = 1.0 - p.beta2.powf(t as f64);
    for (((x, &g), m), v) in value.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        let theta = x.as_f64();
        let g = g.as_f64() + weight_decay * theta;
        let m1 = p.beta1 * m.as_f64() + (1.0 - p.beta1) * g;
        let v1 = p.beta2 * v.as_f64() + (1.0 - p.beta2) * g * g;
        *m = T::from_f64(m1);
        *v = T::from_f64(v1);
        let step = lr * (m1 / c1) / ((v1 / c2).sqrt() + p.eps);
        *x = T::from_f64(theta - step);
    }
}

#[derive(Clone, Debug)]
struct Slot<T> {
    name: String,
    dims: Vec<usize>,
    m: Vec<T>,
    v: Vec<T>,
}

/// Moments for every trainable parameter of a model, in visit order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub weight_decay: f64,
    pub params: AdamParams,
    t: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, weight_decay: f64, params: AdamParams) -> Self {
        Adam {
            lr,
            weight_decay,
            params,
            t: 0,
            slots: Vec::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    fn ensure_slots<M: Module<T> + ?Sized>(&mut self, model: &M) {
        if !self.slots.is_empty() {
            return;
        }
        model.visit(&mut |p| {
            if p.is_trainable() {
                self.slots.push(Slot {
                    name: p.name.clone(),
                    dims: p.dims(),
                    m: vec![T::zero(); p.value.len()],
                    v: vec![T::zero(); p.value.len()],
                });
            }
        });
    }

    /// Applies one update from the gradients accumulated in `model`.
    pub fn step<M: Module<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.ensure_slots(model);
        self.t += 1;
        let (t, lr, wd, hp) = (self.t, self.lr, self.weight_decay, self.params);
        let mut k = 0;
        let mut mismatch = None;
        let slots = &mut self.slots;
        model.visit_mut(&mut |p| {
            if !p.is_trainable() || mismatch.is_some() {
                return;
            }
            match slots.get_mut(k) {
                Some(s) if s.name == p.name && s.m.len() == p.value.len() => {
                    adam_update(p.value.data_mut(), p.grad.data(), &mut s.m, &mut s.v, t, lr, wd, &hp);
                }
                _ => mismatch = Some(p.name.clone()),
            }
            k += 1;
        });
        if mismatch.is_none() && k != self.slots.len() {
            mismatch = Some(format!("{} parameters, optimizer holds {}", k, self.slots.len()));
        }
        match mismatch {
            Some(name) => Err(Error::InvalidArgument {
                op: "adam.step",
                reason: format!("optimizer state does not match the model at `{name}`"),
            }),
            None => Ok(()),
        }
    }

    pub fn state(&self) -> OptimizerState {
        let pack = |s: &Slot<T>, v: &[T]| NamedTensor {
            name: s.name.clone(),
            dims: s.dims.clone(),
            data: v.iter().map(|x| x.as_f64() as f32).collect(),
        };
        OptimizerState {
            t: self.t,
            m: self.slots.iter().map(|s| pack(s, &s.m)).collect(),
            v: self.slots.iter().map(|s| pack(s, &s.v)).collect(),
        }
    }

    /// Restores moments saved by [`Adam::state`]. Every trainable parameter
    /// of `model` must have both moments with matching dims.
    pub fn load_state<M: Module<T> + ?Sized>(&mut self, model: &M, state: &OptimizerState) -> Result<()> {
        let mut slots = Vec::new();
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        model.visit(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            let dims = p.dims();
            let find = |list: &[NamedTensor]| list.iter().find(|t| t.name == p.name).cloned();
            match (find(&state.m), find(&state.v)) {
                (Some(m), Some(v)) if m.dims == dims && v.dims == dims => slots.push(Slot {
                    name: p.name.clone(),
                    dims,
                    m: m.data.iter().map(|&x| T::from_f64(x as f64)).collect(),
                    v: v.data.iter().map(|&x| T::from_f64(x as f64)).collect(),
                }),
                (Some(_), Some(_)) => mismatched.push(p.name.clone()),
                _ => missing.push(p.name.clone()),
            }
        });
        if !mismatched.is_empty() {
            return Err(Error::ShapeMismatch { names: mismatched });
        }
        if !missing.is_empty() {
            return Err(Error::MissingTensors { names: missing });
        }
        let known = |name: &str| slots.iter().any(|s| s.name == name);
        if let Some(extra) = state.m.iter().chain(&state.v).find(|t| !known(&t.name)) {
            return Err(crate::error::FormatError::UnknownTensor(extra.name.clone()).into());
        }
        self.t = state.t;
        self.slots = slots;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update(x: f64, g: f64, m: &mut f64, v: &mut f64, t: u64, lr: f64, wd: f64) -> f64 {
        let mut xs = [x];
        let (mut ms, mut vs) = ([*m], [*v]);
        adam_update(&mut xs, &[g], &mut ms, &mut vs, t, lr, wd, &AdamParams::default());
        *m = ms[0];
        *v = vs[0];
        xs[0]
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.5, 7.0, -3.0] {
            let (mut m, mut v) = (0.0, 0.0);
            let x = update(1.0, g, &mut m, &mut v, 1, 0.01, 0.0);
            // m_hat / sqrt(v_hat) = g / |g|, up to eps.
            assert!(((1.0 - x) - 0.01 * g.signum()).abs() < 1e-7, "g={g}: {x}");
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let (mut m, mut v) = (0.0, 0.0);
        let mut x = 0.7;
        for t in 1..=5 {
            x = update(x, 0.0, &mut m, &mut v, t, 0.1, 0.0);
        }
        assert_eq!(x, 0.7);
    }

    #[test]
    fn quadratic_shrinks_monotonically() {
        let (mut m, mut v) = (0.0, 0.0);
        let mut x: f64 = 1.0;
        for t in 1..=10 {
            let next = update(x, 2.0 * x, &mut m, &mut v, t, 0.05, 0.0);
            assert!(next.abs() < x.abs(), "step {t}: {next} vs {x}");
            x = next;
        }
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        // With g = 0 the coupled decay alone drives the update, so the first
        // step is lr * sign(theta) just like a plain gradient.
        let (mut m, mut v) = (0.0, 0.0);
        let x = update(2.0, 0.0, &mut m, &mut v, 1, 0.01, 5e-3);
        assert!((x - 1.99).abs() < 1e-6);
        assert!((m - 0.1 * 5e-3 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_hand_rolled_recursion() {
        let hp = AdamParams::default();
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.3f64);
        let (mut m2, mut v2, mut x2) = (0.0f64, 0.0f64, 0.3f64);
        for t in 1..=20u64 {
            let g = (t as f64 * 0.7).sin();
            x = update(x, g, &mut m, &mut v, t, 1e-2, 1e-3);
            let g2 = g + 1e-3 * x2;
            m2 = hp.beta1 * m2 + (1.0 - hp.beta1) * g2;
            v2 = hp.beta2 * v2 + (1.0 - hp.beta2) * g2 * g2;
            let mh = m2 / (1.0 - hp.beta1.powi(t as i32));
            let vh = v2 / (1.0 - hp.beta2.powi(t as i32));
            x2 -= 1e-2 * mh / (vh.sqrt() + hp.eps);
        }
        assert!((x - x2).abs() < 1e-14);
    }
}
