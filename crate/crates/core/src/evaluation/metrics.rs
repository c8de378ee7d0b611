//! Count errors, SSIM, checkerboard energy and error buckets.

use crate::error::{Error, Result};

fn check_counts(pred: &[f64], gt: &[f64], op: &'static str) -> Result<()> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::InvalidArgument {
            op,
            reason: format!("need equal-length nonempty lists, got {} and {}", pred.len(), gt.len()),
        });
    }
    Ok(())
}

/// Mean absolute count error.
pub fn mae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_counts(pred, gt, "mae")?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Root mean squared count error.
pub fn rmse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_counts(pred, gt, "rmse")?;
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Floor on the dynamic range used by [`ssim`].
pub const SSIM_MIN_RANGE: f64 = 1e-6;

/// Mean SSIM with the dynamic range taken from `gt` (floored at
/// [`SSIM_MIN_RANGE`]).
pub fn ssim(pred: &[f64], gt: &[f64], h: usize, w: usize) -> Result<f64> {
    let (lo, hi) = gt.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    ssim_with_range(pred, gt, h, w, (hi - lo).max(SSIM_MIN_RANGE))
}

/// Mean of the local SSIM over every fully contained 11x11 Gaussian window
/// (sigma 1.5), with `C1 = (0.01 L)^2` and `C2 = (0.03 L)^2`.
pub fn ssim_with_range(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> Result<f64> {
    let n = SSIM_WINDOW;
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::InvalidArgument {
            op: "ssim",
            reason: format!("maps must both hold {h}x{w} values, got {} and {}", a.len(), b.len()),
        });
    }
    if h < n || w < n {
        return Err(Error::InvalidArgument {
            op: "ssim",
            reason: format!("maps must be at least {n}x{n}, got {h}x{w}"),
        });
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidArgument {
            op: "ssim",
            reason: format!("dynamic range must be positive, got {range}"),
        });
    }
    let half = (n / 2) as f64;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / total).collect();

    let products = [
        a.to_vec(),
        b.to_vec(),
        a.iter().map(|v| v * v).collect(),
        b.iter().map(|v| v * v).collect(),
        a.iter().zip(b).map(|(x, y)| x * y).collect(),
    ];
    let [mu_a, mu_b, aa, bb, ab] = products.map(|p| filter_valid(&p, h, w, &g));
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(sum / mu_a.len() as f64)
}

/// Separable "valid" correlation with the symmetric kernel `g`.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    // Horizontal pass.
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for xo in 0..ow {
            rows[y * ow + xo] = g.iter().zip(&src[xo..xo + n]).map(|(k, v)| k * v).sum();
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = g.iter().enumerate().map(|(k, gk)| gk * rows[(yo + k) * ow + xo]).sum();
        }
    }
    out
}

/// Share of a map's local high-frequency energy that is checkerboard-shaped.
///
/// Every 2x2 block `[[a, b], [c, d]]` splits its energy around the block
/// mean into three orthogonal patterns: horizontal, vertical and the
/// checkerboard `(a - b - c + d) / 2`. The result is the summed squared
/// checkerboard component over the summed zero-mean block energy, so it is
/// 1 for a perfect checkerboard, 0 for a constant map, and unchanged by
/// offsets and positive scaling.
pub fn checkerboard_energy(map: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < 2 || w < 2 || map.len() != h * w {
        return Err(Error::InvalidArgument {
            op: "checkerboard_energy",
            reason: format!("need a map of at least 2x2 with {h}x{w} values, got {}", map.len()),
        });
    }
    let (mut checker, mut total) = (0.0, 0.0);
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let (a, b) = (map[y * w + x], map[y * w + x + 1]);
            let (c, d) = (map[(y + 1) * w + x], map[(y + 1) * w + x + 1]);
            let mean = (a + b + c + d) / 4.0;
            let r = (a - b - c + d) / 2.0;
            checker += r * r;
            total += [a, b, c, d].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
    }
    Ok(if total > 0.0 { (checker / total).min(1.0) } else { 0.0 })
}

/// Ground-truth count ranges of the error table; the last is open.
pub const BUCKET_BOUNDS: [(f64, Option<f64>); 5] = [
    (0.0, Some(200.0)),
    (200.0, Some(300.0)),
    (300.0, Some(500.0)),
    (500.0, Some(1000.0)),
    (1000.0, None),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bucket {
    pub lo: f64,
    pub hi: Option<f64>,
    pub abs_error: f64,
    /// Share of the total absolute error, in percent (0 when the total is 0).
    pub percent: f64,
    pub images: usize,
}

impl Bucket {
    pub fn contains(&self, count: f64) -> bool {
        count >= self.lo && self.hi.is_none_or(|hi| count < hi)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("[{}, {})", self.lo, hi),
            None => format!("[{}, inf)", self.lo),
        }
    }
}

/// Splits `|errors|` by the ground-truth count of each image.
pub fn bucket_errors(errors: &[f64], gt_counts: &[f64]) -> Result<Vec<Bucket>> {
    if errors.len() != gt_counts.len() {
        return Err(Error::InvalidArgument {
            op: "bucket_errors",
            reason: format!("{} errors for {} counts", errors.len(), gt_counts.len()),
        });
    }
    let mut buckets: Vec<Bucket> = BUCKET_BOUNDS
        .iter()
        .map(|&(lo, hi)| Bucket {
            lo,
            hi,
            abs_error: 0.0,
            percent: 0.0,
            images: 0,
        })
        .collect();
    for (&e, &g) in errors.iter().zip(gt_counts) {
        let b = buckets.iter_mut().find(|b| b.contains(g)).ok_or_else(|| Error::InvalidArgument {
            op: "bucket_errors",
            reason: format!("ground-truth count {g} falls in no bucket"),
        })?;
        b.abs_error += e.abs();
        b.images += 1;
    }
    let total: f64 = buckets.iter().map(|b| b.abs_error).sum();
    if total > 0.0 {
        buckets.iter_mut().for_each(|b| b.percent = 100.0 * b.abs_error / total);
    }
    Ok(buckets)
}
