//! Ground-truth rasters derived from head annotations: count-preserving
//! density maps (fixed or geometry-adaptive Gaussian spread), binary
//! reinforcement masks, and their half-resolution training targets.

mod kernel;
mod knn;

pub use kernel::{gaussian_1d, normalized_stamp_axis};
pub use knn::knn_mean_distance;

use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 4.0;
pub const DEFAULT_WINDOW: usize = 15;
pub const DEFAULT_BETA_ADAPT: f64 = 0.3;
pub const DEFAULT_K_NEIGHBORS: usize = 3;
pub const REINFORCEMENT_SIGMA: f64 = 8.0;
pub const REINFORCEMENT_WINDOW: usize = 31;
pub const REINFORCEMENT_THRESHOLD: f64 = 0.001;
/// Bounds on the adaptive spread.
pub const ADAPTIVE_SIGMA_RANGE: (f64, f64) = (0.5, 25.0);

#[derive(Clone, Debug, PartialEq)]
pub struct HeadAnnotations {
    pub width: usize,
    pub height: usize,
    pub points: Vec<(f64, f64)>,
}

impl HeadAnnotations {
    /// Rejects non-finite or out-of-bounds points.
    pub fn new(width: usize, height: usize, points: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, y) in &points {
            let inside = x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64;
            if !inside {
                return Err(Error::PointOutOfBounds { x, y, width, height });
            }
        }
        Ok(HeadAnnotations { width, height, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mirror about the vertical axis: pixel column `c` maps to `w - 1 - c`.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.width as f64;
        HeadAnnotations {
            width: self.width,
            height: self.height,
            points: self.points.iter().map(|&(x, y)| ((w - 1.0 - x).max(0.0), y)).collect(),
        }
    }

    /// Nearest pixel of each point (round half up), clamped to the image.
    pub fn pixel(&self, i: usize) -> (usize, usize) {
        let (x, y) = self.points[i];
        (to_pixel(y, self.height), to_pixel(x, self.width))
    }
}

fn to_pixel(v: f64, extent: usize) -> usize {
    ((v + 0.5).floor().max(0.0) as usize).min(extent - 1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub sigma: f64,
    /// Odd side length of the stamp.
    pub window: usize,
    pub adaptive: bool,
    pub beta_adapt: f64,
    pub k_neighbors: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            sigma: DEFAULT_SIGMA,
            window: DEFAULT_WINDOW,
            adaptive: false,
            beta_adapt: DEFAULT_BETA_ADAPT,
            k_neighbors: DEFAULT_K_NEIGHBORS,
        }
    }
}

impl KernelParams {
    pub fn adaptive() -> Self {
        KernelParams {
            adaptive: true,
            ..KernelParams::default()
        }
    }

    /// Wider blur used for the reinforcement mask.
    pub fn reinforcement() -> Self {
        KernelParams {
            sigma: REINFORCEMENT_SIGMA,
            window: REINFORCEMENT_WINDOW,
            ..KernelParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config(reason));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.window < 3 || self.window.is_multiple_of(2) {
            return bad(format!("window must be odd and >= 3, got {}", self.window));
        }
        if !(self.beta_adapt > 0.0 && self.beta_adapt.is_finite()) {
            return bad(format!("beta_adapt must be positive, got {}", self.beta_adapt));
        }
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-head spread and window for the adaptive mode.
pub fn adaptive_sigma(mean_distance: f64, beta: f64) -> (f64, usize) {
    let (lo, hi) = ADAPTIVE_SIGMA_RANGE;
    let sigma = (beta * mean_distance).clamp(lo, hi);
    (sigma, 2 * (3.0 * sigma).ceil() as usize + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub sigma: f64,
    pub window: usize,
    pub adaptive: bool,
}

impl DensityMap {
    pub fn count(&self) -> f64 {
        count_from_density(&self.values)
    }

    /// 2x2 sum pooling, which keeps the total count.
    pub fn downsample_2x(&self) -> Result<DensityMap> {
        Ok(DensityMap {
            height: self.height / 2,
            width: self.width / 2,
            values: pool_2x(self.height, self.width, &self.values, |a, b, c, d| (a + b) + (c + d))?,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReinforcementMap {
    pub height: usize,
    pub width: usize,
    /// Exactly 0.0 or 1.0.
    pub values: Vec<f64>,
    pub sigma: f64,
    pub window: usize,
    pub threshold: f64,
}

impl ReinforcementMap {
    /// 2x2 max pooling, which keeps the map binary.
    pub fn downsample_2x(&self) -> Result<ReinforcementMap> {
        Ok(ReinforcementMap {
            height: self.height / 2,
            width: self.width / 2,
            values: pool_2x(self.height, self.width, &self.values, |a, b, c, d| a.max(b).max(c).max(d))?,
            ..self.clone()
        })
    }

    pub fn foreground(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }
}

fn pool_2x(h: usize, w: usize, v: &[f64], f: impl Fn(f64, f64, f64, f64) -> f64) -> Result<Vec<f64>> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::OddSpatial {
            op: "downsample_target_2x",
            h,
            w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (r0, r1) = (2 * y * w, (2 * y + 1) * w);
        for x in 0..ow {
            out.push(f(v[r0 + 2 * x], v[r0 + 2 * x + 1], v[r1 + 2 * x], v[r1 + 2 * x + 1]));
        }
    }
    Ok(out)
}

/// Sum pooling on a bare raster (density semantics).
pub fn sum_pool_2x(h: usize, w: usize, values: &[f64]) -> Result<Vec<f64>> {
    pool_2x(h, w, values, |a, b, c, d| (a + b) + (c + d))
}

/// Max pooling on a bare raster (mask semantics).
pub fn max_pool_2x(h: usize, w: usize, values: &[f64]) -> Result<Vec<f64>> {
    pool_2x(h, w, values, |a, b, c, d| a.max(b).max(c).max(d))
}

pub fn count_from_density(values: &[f64]) -> f64 {
    values.iter().sum()
}

/// Stamps one renormalized Gaussian per head with a shared spread.
pub fn gen_density_fixed(ann: &HeadAnnotations, params: &KernelParams) -> DensityMap {
    let mut values = vec![0.0; ann.width * ann.height];
    let g = gaussian_1d(params.sigma, params.window);
    for i in 0..ann.points.len() {
        kernel::stamp_renormalized(&mut values, ann.height, ann.width, ann.pixel(i), &g);
    }
    DensityMap {
        height: ann.height,
        width: ann.width,
        values,
        sigma: params.sigma,
        window: params.window,
        adaptive: false,
    }
}

/// Per-head spread `beta_adapt` times the mean distance to the
/// `k_neighbors` nearest heads. A lone head uses the fixed spread.
pub fn gen_density_adaptive(ann: &HeadAnnotations, params: &KernelParams) -> DensityMap {
    if ann.points.len() < 2 {
        return DensityMap {
            adaptive: true,
            ..gen_density_fixed(ann, params)
        };
    }
    let mut values = vec![0.0; ann.width * ann.height];
    for i in 0..ann.points.len() {
        let d = knn_mean_distance(&ann.points, i, params.k_neighbors).expect("at least two points");
        let (sigma, window) = adaptive_sigma(d, params.beta_adapt);
        let g = gaussian_1d(sigma, window);
        kernel::stamp_renormalized(&mut values, ann.height, ann.width, ann.pixel(i), &g);
    }
    DensityMap {
        height: ann.height,
        width: ann.width,
        values,
        sigma: params.sigma,
        window: params.window,
        adaptive: true,
    }
}

pub fn gen_density(ann: &HeadAnnotations, params: &KernelParams) -> DensityMap {
    if params.adaptive {
        gen_density_adaptive(ann, params)
    } else {
        gen_density_fixed(ann, params)
    }
}

/// Sum of whole-window-normalized Gaussians (no edge renormalization),
/// binarized at `threshold`.
pub fn gen_reinforcement(ann: &HeadAnnotations, params: &KernelParams, threshold: f64) -> Result<ReinforcementMap> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument {
            op: "gen_reinforcement",
            reason: format!("threshold must be positive, got {threshold}"),
        });
    }
    let blurred = blur_unnormalized(ann, params);
    Ok(ReinforcementMap {
        height: ann.height,
        width: ann.width,
        values: blurred.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect(),
        sigma: params.sigma,
        window: params.window,
        threshold,
    })
}

/// The continuous-valued blur the reinforcement mask thresholds.
pub fn blur_unnormalized(ann: &HeadAnnotations, params: &KernelParams) -> Vec<f64> {
    let mut values = vec![0.0; ann.width * ann.height];
    let g = gaussian_1d(params.sigma, params.window);
    let total: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / total).collect();
    for i in 0..ann.points.len() {
        kernel::stamp(&mut values, ann.height, ann.width, ann.pixel(i), &g, &g);
    }
    values
}

#[cfg(test)]
mod tests;
