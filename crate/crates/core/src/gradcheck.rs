//! Finite-difference verification of analytic gradients.
//!
//! Each check projects an op's output onto a fixed random tensor `r` so the
//! scalar loss is `sum(r * out)` and the upstream gradient is exactly `r`.
//! Analytic gradients are compared with central differences in `f64`.
//!
//! The error reported per tensor is
//! `max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)`,
//! i.e. the worst deviation relative to the tensor's gradient scale.

use std::cell::RefCell;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{Module, UpsampleMode, WNet, WNetConfig};
use crate::tensor::{self, BatchNormState, Mode, Shape, Tensor4};
use crate::training::losses::{joint_loss, LossWeights};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-6;
pub const END_TO_END_TOLERANCE: f64 = 1e-5;

/// One tensor whose gradient is checked.
#[derive(Clone, Debug)]
pub struct Probe {
    pub name: String,
    pub values: Vec<f64>,
    /// Entries to perturb; `None` checks every entry.
    pub indices: Option<Vec<usize>>,
    /// When set, only the first `n` entries of `indices` whose stencil is
    /// smooth are compared; the rest are skipped.
    pub want: Option<usize>,
}

impl Probe {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Probe {
            name: name.into(),
            values,
            indices: None,
            want: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    /// Entries whose finite-difference stencil crossed a non-smooth point.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub tolerance: f64,
    pub tensors: Vec<TensorReport>,
    /// Set when evaluation failed outright (error or non-finite value).
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.tensors.iter().all(|t| t.max_rel_error <= self.tolerance)
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<28} max rel err {:.3e} (tol {:.0e})", self.name, self.max_rel_error(), self.tolerance)?;
        if self.skipped() > 0 {
            write!(f, " [{} non-smooth stencils resampled]", self.skipped())?;
        }
        if let Some(reason) = &self.failure {
            write!(f, " [{reason}]")?;
        }
        Ok(())
    }
}

/// Compare `analytic` against central differences of `loss`.
///
/// Both closures receive the current values of every probe, in order.
pub fn check_gradients<L, G>(name: &str, probes: &[Probe], mut loss: L, analytic: G, step: f64, tolerance: f64) -> GradCheckReport
where
    L: FnMut(&[Vec<f64>]) -> Result<f64>,
    G: FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    check_gradients_piecewise(name, probes, |v| Ok((loss(v)?, 0)), analytic, FiniteDiff::central(step), tolerance)
}

/// Finite-difference scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    Central2,
    /// `(f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h`, error O(h^4).
    Central4,
}

impl Stencil {
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::Central2 => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::Central4 => &[(2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDiff {
    pub step: f64,
    pub stencil: Stencil,
    /// How many times a non-smooth stencil is retried at a tenth of the
    /// previous step before the entry is skipped.
    pub refinements: usize,
}

impl FiniteDiff {
    pub fn central(step: f64) -> Self {
        FiniteDiff {
            step,
            stencil: Stencil::Central2,
            refinements: 0,
        }
    }
}

/// Like [`check_gradients`] for piecewise-smooth losses. `loss` also
/// returns a fingerprint of its activation pattern (relu signs, max-pool
/// winners). A finite difference is only meaningful when the loss is
/// smooth over the whole stencil, so an entry whose pattern at any tap
/// differs from the pattern at `x` is retried with a smaller step and
/// eventually counted as skipped instead of compared.
pub fn check_gradients_piecewise<L, G>(
    name: &str,
    probes: &[Probe],
    mut loss: L,
    mut analytic: G,
    fd: FiniteDiff,
    tolerance: f64,
) -> GradCheckReport
where
    L: FnMut(&[Vec<f64>]) -> Result<(f64, u64)>,
    G: FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    let mut report = GradCheckReport {
        name: name.to_string(),
        tolerance,
        tensors: Vec::new(),
        failure: None,
    };
    let mut values: Vec<Vec<f64>> = probes.iter().map(|p| p.values.clone()).collect();
    let grads = match analytic(&values) {
        Ok(g) => g,
        Err(e) => {
            report.failure = Some(format!("analytic pass failed: {e}"));
            return report;
        }
    };
    if grads.len() != probes.len() || grads.iter().zip(probes).any(|(g, p)| g.len() != p.values.len()) {
        report.failure = Some("analytic gradient shapes do not match probes".into());
        return report;
    }
    let base = match loss(&values) {
        Ok((_, pattern)) => pattern,
        Err(e) => {
            report.failure = Some(format!("loss evaluation failed: {e}"));
            return report;
        }
    };
    for (t, probe) in probes.iter().enumerate() {
        let mut indices: Vec<usize> = match &probe.indices {
            Some(ix) => ix.clone(),
            None => (0..probe.values.len()).collect(),
        };
        // Entries of dead units have an exactly zero gradient and a finite
        // difference made of roundoff alone; try informative ones first.
        indices.sort_by_key(|&i| grads[t][i] == 0.0);
        let want = probe.want.unwrap_or(indices.len());
        let (mut checked, mut skipped) = (0, 0);
        let mut max_diff = 0.0f64;
        let mut scale = 0.0f64;
        for &i in &indices {
            if checked == want {
                break;
            }
            let orig = values[t][i];
            let mut numeric = None;
            let mut step = fd.step;
            for _ in 0..=fd.refinements {
                let mut acc = 0.0;
                let mut smooth = true;
                for &(offset, weight) in fd.stencil.taps() {
                    values[t][i] = orig + offset * step;
                    let result = loss(&values);
                    values[t][i] = orig;
                    match result {
                        Ok((l, pattern)) => {
                            smooth &= pattern == base;
                            acc += weight * l;
                        }
                        Err(e) => {
                            report.failure = Some(format!("{}[{i}]: {e}", probe.name));
                            return report;
                        }
                    }
                }
                if smooth {
                    numeric = Some(acc / step);
                    break;
                }
                step /= 10.0;
            }
            let Some(numeric) = numeric else {
                skipped += 1;
                continue;
            };
            let a = grads[t][i];
            if !numeric.is_finite() || !a.is_finite() {
                report.failure = Some(format!("{}[{i}]: non-finite gradient", probe.name));
                return report;
            }
            max_diff = max_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
            checked += 1;
        }
        if checked == 0 && want > 0 && !indices.is_empty() {
            report.failure = Some(format!("{}: no smooth stencil among {} candidates", probe.name, indices.len()));
            return report;
        }
        let max_rel_error = if scale > 0.0 { max_diff / scale } else { 0.0 };
        report.tensors.push(TensorReport {
            name: probe.name.clone(),
            checked,
            skipped,
            max_rel_error,
        });
    }
    report
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn tensor(shape: Shape, values: &[f64]) -> Result<Tensor4<f64>> {
    Tensor4::from_vec(shape, values.to_vec())
}

fn project(out: &Tensor4<f64>, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Values spaced at least `gap` apart so that no perturbation of size
/// [`DEFAULT_STEP`] changes a max-pool winner.
fn distinct_values(rng: &mut ChaCha8Rng, len: usize, gap: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|i| i as f64 * gap - len as f64 * gap / 2.0).collect();
    v.shuffle(rng);
    v
}

/// Values bounded away from zero so relu never crosses its kink.
fn off_kink_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let mag = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

pub fn check_conv2d(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ws, stride, pad) = if seed == 0 {
        (Shape::new(2, 3, 5, 5), Shape::new(4, 3, 3, 3), 1, 1)
    } else {
        let k = if rng.random_bool(0.5) { 3 } else { 1 };
        let cin = rng.random_range(1..4);
        (
            Shape::new(rng.random_range(1..3), cin, rng.random_range(3..7), rng.random_range(3..7)),
            Shape::new(rng.random_range(1..4), cin, k, k),
            rng.random_range(1..3),
            rng.random_range(0..2),
        )
    };
    let x = normal_vec(&mut rng, xs.len());
    let w = normal_vec(&mut rng, ws.len());
    let b = normal_vec(&mut rng, ws.n);
    let probe_out = match tensor::conv2d(&Tensor4::from_vec(xs, x.clone()).unwrap(), &Tensor4::from_vec(ws, w.clone()).unwrap(), Some(&b), stride, pad) {
        Ok(o) => o.shape(),
        Err(e) => {
            return GradCheckReport {
                name: "conv2d".into(),
                tolerance: OP_TOLERANCE,
                tensors: vec![],
                failure: Some(e.to_string()),
            }
        }
    };
    let r = normal_vec(&mut rng, probe_out.len());
    let probes = [Probe::new("input", x), Probe::new("weight", w), Probe::new("bias", b)];
    check_gradients(
        "conv2d",
        &probes,
        |v| Ok(project(&tensor::conv2d(&tensor(xs, &v[0])?, &tensor(ws, &v[1])?, Some(&v[2]), stride, pad)?, &r)),
        |v| {
            let g = tensor::conv2d_backward(&tensor(xs, &v[0])?, &tensor(ws, &v[1])?, stride, pad, &tensor(probe_out, &r)?, true)?;
            Ok(vec![g.input.unwrap().into_data(), g.weight.into_data(), g.bias])
        },
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

pub fn check_transpose_conv2d(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = rng.random_range(1..4);
    let k = rng.random_range(1..4);
    let xs = Shape::new(rng.random_range(1..3), cin, rng.random_range(1..5), rng.random_range(1..5));
    let ws = Shape::new(cin, rng.random_range(1..4), k, k);
    let stride = rng.random_range(1..3);
    let out = Shape::new(xs.n, ws.c, (xs.h - 1) * stride + k, (xs.w - 1) * stride + k);
    let probes = [
        Probe::new("input", normal_vec(&mut rng, xs.len())),
        Probe::new("weight", normal_vec(&mut rng, ws.len())),
    ];
    let r = normal_vec(&mut rng, out.len());
    check_gradients(
        "transpose_conv2d",
        &probes,
        |v| Ok(project(&tensor::transpose_conv2d(&tensor(xs, &v[0])?, &tensor(ws, &v[1])?, stride)?, &r)),
        |v| {
            let g = tensor::transpose_conv2d_backward(&tensor(xs, &v[0])?, &tensor(ws, &v[1])?, stride, &tensor(out, &r)?)?;
            Ok(vec![g.input.into_data(), g.weight.into_data()])
        },
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

pub fn check_batchnorm2d(seed: u64, mode: Mode) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = if seed == 0 {
        Shape::new(4, 2, 3, 3)
    } else {
        Shape::new(rng.random_range(2..5), rng.random_range(1..4), rng.random_range(2..5), rng.random_range(2..5))
    };
    let c = xs.c;
    let probes = [
        Probe::new("input", normal_vec(&mut rng, xs.len())),
        Probe::new("gamma", normal_vec(&mut rng, c)),
        Probe::new("beta", normal_vec(&mut rng, c)),
    ];
    let running_mean = normal_vec(&mut rng, c);
    let running_var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    let r = normal_vec(&mut rng, xs.len());
    let make_state = |v: &[Vec<f64>]| {
        let mut st = BatchNormState::<f64>::new("bn", c);
        st.gamma.value.data_mut().copy_from_slice(&v[1]);
        st.shift.value.data_mut().copy_from_slice(&v[2]);
        st.running_mean.value.data_mut().copy_from_slice(&running_mean);
        st.running_var.value.data_mut().copy_from_slice(&running_var);
        st.mode = mode;
        st
    };
    let name = match mode {
        Mode::Train => "batchnorm2d[train]",
        Mode::Eval => "batchnorm2d[eval]",
    };
    check_gradients(
        name,
        &probes,
        |v| {
            let mut st = make_state(v);
            Ok(project(&tensor::batchnorm2d(&tensor(xs, &v[0])?, &mut st)?.0, &r))
        },
        |v| {
            let mut st = make_state(v);
            let (_, cache) = tensor::batchnorm2d(&tensor(xs, &v[0])?, &mut st)?;
            let gi = tensor::batchnorm2d_backward(&mut st, &cache, &tensor(xs, &r)?)?;
            Ok(vec![gi.into_data(), st.gamma.grad.into_data(), st.shift.grad.into_data()])
        },
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

pub fn check_maxpool2x2(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = Shape::new(rng.random_range(1..3), rng.random_range(1..4), 2 * rng.random_range(1..4), 2 * rng.random_range(1..4));
    let os = Shape::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
    let probes = [Probe::new("input", distinct_values(&mut rng, xs.len(), 0.01))];
    let r = normal_vec(&mut rng, os.len());
    check_gradients(
        "maxpool2x2",
        &probes,
        |v| Ok(project(&tensor::maxpool2x2(&tensor(xs, &v[0])?)?.0, &r)),
        |v| {
            let (_, idx) = tensor::maxpool2x2(&tensor(xs, &v[0])?)?;
            Ok(vec![tensor::maxpool2x2_backward(xs, &idx, &tensor(os, &r)?)?.into_data()])
        },
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

pub fn check_nn_upsample2x(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = Shape::new(rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
    let os = Shape::new(xs.n, xs.c, xs.h * 2, xs.w * 2);
    let probes = [Probe::new("input", normal_vec(&mut rng, xs.len()))];
    let r = normal_vec(&mut rng, os.len());
    check_gradients(
        "nn_upsample2x",
        &probes,
        |v| Ok(project(&tensor::nn_upsample2x(&tensor(xs, &v[0])?), &r)),
        |_| Ok(vec![tensor::nn_upsample2x_backward(&tensor(os, &r)?)?.into_data()]),
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

pub fn check_relu(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = Shape::new(rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
    let probes = [Probe::new("input", off_kink_values(&mut rng, xs.len()))];
    let r = normal_vec(&mut rng, xs.len());
    check_gradients(
        "relu",
        &probes,
        |v| Ok(project(&tensor::relu(&tensor(xs, &v[0])?), &r)),
        |v| {
            let y = tensor::relu(&tensor(xs, &v[0])?);
            Ok(vec![tensor::relu_backward(&y, &tensor(xs, &r)?).into_data()])
        },
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

pub fn check_sigmoid(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = Shape::new(rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
    let probes = [Probe::new("input", normal_vec(&mut rng, xs.len()))];
    let r = normal_vec(&mut rng, xs.len());
    check_gradients(
        "sigmoid",
        &probes,
        |v| Ok(project(&tensor::sigmoid(&tensor(xs, &v[0])?), &r)),
        |v| {
            let y = tensor::sigmoid(&tensor(xs, &v[0])?);
            Ok(vec![tensor::sigmoid_backward(&y, &tensor(xs, &r)?).into_data()])
        },
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

pub fn check_concat_channels(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, h, w) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..5));
    let (ca, cb) = (rng.random_range(1..4), rng.random_range(1..4));
    let (sa, sb) = (Shape::new(n, ca, h, w), Shape::new(n, cb, h, w));
    let probes = [
        Probe::new("a", normal_vec(&mut rng, sa.len())),
        Probe::new("b", normal_vec(&mut rng, sb.len())),
    ];
    let os = Shape::new(n, ca + cb, h, w);
    let r = normal_vec(&mut rng, os.len());
    check_gradients(
        "concat_channels",
        &probes,
        |v| Ok(project(&tensor::concat_channels(&tensor(sa, &v[0])?, &tensor(sb, &v[1])?)?, &r)),
        |_| {
            let (ga, gb) = tensor::split_channels(&tensor(os, &r)?, ca)?;
            Ok(vec![ga.into_data(), gb.into_data()])
        },
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

pub fn check_mul_broadcast(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = if seed == 0 {
        Shape::new(2, 32, 4, 4)
    } else {
        Shape::new(rng.random_range(1..3), rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..5))
    };
    let gs = Shape::new(xs.n, 1, xs.h, xs.w);
    let probes = [
        Probe::new("x", normal_vec(&mut rng, xs.len())),
        Probe::new("gate", normal_vec(&mut rng, gs.len())),
    ];
    let r = normal_vec(&mut rng, xs.len());
    check_gradients(
        "mul_broadcast",
        &probes,
        |v| Ok(project(&tensor::mul_broadcast(&tensor(xs, &v[0])?, &tensor(gs, &v[1])?)?, &r)),
        |v| {
            let (gx, gg) = tensor::mul_broadcast_backward(&tensor(xs, &v[0])?, &tensor(gs, &v[1])?, &tensor(xs, &r)?)?;
            Ok(vec![gx.into_data(), gg.into_data()])
        },
        DEFAULT_STEP,
        OP_TOLERANCE,
    )
}

/// Every primitive op at one seed.
pub fn op_checks(seed: u64) -> Vec<GradCheckReport> {
    vec![
        check_conv2d(seed),
        check_transpose_conv2d(seed),
        check_batchnorm2d(seed, Mode::Train),
        check_batchnorm2d(seed, Mode::Eval),
        check_maxpool2x2(seed),
        check_nn_upsample2x(seed),
        check_relu(seed),
        check_sigmoid(seed),
        check_concat_channels(seed),
        check_mul_broadcast(seed),
    ]
}

/// Finite-difference scheme of the end-to-end check. The loss is a sum
/// over many pixels, so roundoff grows like `|L| / h`; the fourth-order
/// stencil keeps truncation negligible at a step where roundoff is small.
pub const END_TO_END_FD: FiniteDiff = FiniteDiff {
    step: 1e-4,
    stencil: Stencil::Central4,
    refinements: 3,
};

/// Spot-check of the whole tiny network in training mode: the joint loss
/// of both outputs against random targets, differentiated w.r.t. one entry
/// of each of five randomly chosen trainable tensors.
pub fn check_wnet_end_to_end(seed: u64, upsample: UpsampleMode) -> GradCheckReport {
    check_wnet_end_to_end_with(seed, upsample, END_TO_END_FD)
}

pub fn check_wnet_end_to_end_with(seed: u64, upsample: UpsampleMode, fd: FiniteDiff) -> GradCheckReport {
    let name = format!("wnet[{upsample}] seed {seed}");
    let fail = |reason: String| GradCheckReport {
        name: name.clone(),
        tolerance: END_TO_END_TOLERANCE,
        tensors: Vec::new(),
        failure: Some(reason),
    };
    let config = WNetConfig {
        upsample,
        ..WNetConfig::tiny()
    };
    let mut model = match WNet::<f64>::with_seed(config, seed) {
        Ok(m) => m,
        Err(e) => return fail(e.to_string()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Evaluate at a generic, well-conditioned point rather than at the
    // initialization: the 0.01-scale decoder init attenuates whole paths
    // (and can leave the density head dead) until gradients drop below what
    // finite differences resolve, and zero biases put pixels whose gated
    // features are all zero exactly on the output relu's kink.
    model.visit_mut(&mut |p| {
        let s = p.value.shape();
        let (base, spread) = if p.name.ends_with(".weight") {
            let fan_in = if p.name.contains(".up") { s.n } else { s.c * s.h * s.w };
            (0.0, (2.0 / fan_in as f64).sqrt())
        } else if p.name.ends_with(".gamma") {
            (1.0, 0.1)
        } else if p.name == "dme.head.bias" {
            (0.5, 0.1)
        } else if p.name.ends_with(".beta") || p.name.ends_with(".bias") {
            (0.0, 0.1)
        } else {
            return;
        };
        for v in p.value.data_mut() {
            *v = base + spread * rng.sample::<f64, _>(StandardNormal);
        }
    });
    let xs = Shape::new(2, 3, 32, 32);
    let ys = model.output_shape(2, 32, 32);
    let x = match tensor(xs, &normal_vec(&mut rng, xs.len())) {
        Ok(x) => x,
        Err(e) => return fail(e.to_string()),
    };
    let density_gt = Tensor4::from_fn(ys, |_, _, _, _| rng.random_range(0.0..1.0));
    let reinf_gt = Tensor4::from_fn(ys, |_, _, _, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });

    let mut trainable: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit(&mut |p| {
        // A conv bias followed by training-mode batchnorm has an identically
        // zero gradient; there is nothing to compare.
        let before_bn = p.name.ends_with(".bias") && !p.name.ends_with(".head.bias");
        if p.is_trainable() && !before_bn {
            trainable.push((p.name.clone(), p.value.data().to_vec()));
        }
    });
    trainable.shuffle(&mut rng);
    // Twenty candidate entries per tensor; the first smooth one is compared.
    let probes: Vec<Probe> = trainable
        .into_iter()
        .take(5)
        .map(|(name, values)| {
            let indices = (0..20).map(|_| rng.random_range(0..values.len())).collect();
            Probe {
                name,
                values,
                indices: Some(indices),
                want: Some(1),
            }
        })
        .collect();
    let names: Vec<String> = probes.iter().map(|p| p.name.clone()).collect();

    let model = RefCell::new(model);
    let weights = LossWeights::default();
    let run = |values: &[Vec<f64>], grads: bool| -> Result<(f64, u64, Vec<Vec<f64>>)> {
        let mut m = model.borrow_mut();
        m.visit_mut(&mut |p| {
            if let Some(k) = names.iter().position(|n| *n == p.name) {
                p.value.data_mut().copy_from_slice(&values[k]);
            }
        });
        let out = m.forward(x.clone())?;
        let pattern = m.activation_pattern();
        let r = out.reinforcement.as_ref().map(|r| (r, &reinf_gt));
        let loss = joint_loss(&out.density, &density_gt, r, &weights)?;
        if !grads {
            return Ok((loss.total, pattern, Vec::new()));
        }
        m.zero_grad();
        m.backward(&loss.grad_density, loss.grad_reinforcement.as_ref(), false)?;
        let mut g = vec![Vec::new(); names.len()];
        m.visit(&mut |p| {
            if let Some(k) = names.iter().position(|n| *n == p.name) {
                g[k] = p.grad.data().to_vec();
            }
        });
        Ok((loss.total, pattern, g))
    };
    let mut report = check_gradients_piecewise(
        &name,
        &probes,
        |v| run(v, false).map(|(l, p, _)| (l, p)),
        |v| run(v, true).map(|(_, _, g)| g),
        fd,
        END_TO_END_TOLERANCE,
    );
    report.name = name;
    report
}

/// Per-op checks and both end-to-end variants over `seeds`.
pub fn full_suite(seeds: std::ops::Range<u64>) -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    for seed in seeds {
        out.extend(op_checks(seed));
        out.push(check_wnet_end_to_end(seed, UpsampleMode::Nearest));
        out.push(check_wnet_end_to_end(seed, UpsampleMode::Transpose));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass_on_first_seeds() {
        for seed in 0..3 {
            for report in op_checks(seed) {
                assert!(report.passed(), "seed {seed}: {report}");
            }
        }
    }

    #[test]
    fn end_to_end_first_seeds() {
        for seed in 0..2 {
            for up in [UpsampleMode::Nearest, UpsampleMode::Transpose] {
                let report = check_wnet_end_to_end(seed, up);
                assert!(report.passed(), "{report}");
                assert_eq!(report.tensors.len(), 5);
            }
        }
    }

    #[test]
    fn sign_flipped_backward_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = Shape::new(1, 2, 3, 3);
        let probes = [Probe::new("input", normal_vec(&mut rng, xs.len()))];
        let r = normal_vec(&mut rng, xs.len());
        let report = check_gradients(
            "sigmoid[corrupted]",
            &probes,
            |v| Ok(project(&tensor::sigmoid(&tensor(xs, &v[0])?), &r)),
            |v| {
                let y = tensor::sigmoid(&tensor(xs, &v[0])?);
                Ok(vec![tensor::sigmoid_backward(&y, &tensor(xs, &r)?).map(|g| -g).into_data()])
            },
            DEFAULT_STEP,
            OP_TOLERANCE,
        );
        assert!(!report.passed());
        assert!(report.max_rel_error() > 1.0);
    }

    #[test]
    fn non_finite_loss_is_reported_not_panicked() {
        let probes = [Probe::new("x", vec![1.0, 2.0])];
        let report = check_gradients(
            "nan",
            &probes,
            |_| Ok(f64::NAN),
            |v| Ok(vec![v[0].clone()]),
            DEFAULT_STEP,
            OP_TOLERANCE,
        );
        assert!(!report.passed());
        assert!(report.failure.is_some());
    }
}
