//! Nine-patch inference, count metrics and the evaluation report.

pub mod metrics;
pub mod patches;

use std::fmt::Write as _;

pub use metrics::{
    bucket_errors, checkerboard_energy, mae, rmse, ssim, ssim_with_range, Bucket, BUCKET_BOUNDS,
};
pub use patches::{merge_patches, split_nine_patches, PatchLayout};

use crate::error::{Error, FormatError, Result};
use crate::groundtruth::sum_pool_2x;
use crate::model::WNet;
use crate::parallel;
use crate::tensor::{Shape, Tensor4};
use crate::training::Scene;

/// Anything that maps image patches to half-resolution density maps.
pub trait DensityPredictor: Sync {
    /// `patches` are planar `3 x h x w` images; each result is
    /// `(h / 2) x (w / 2)`, row-major.
    fn predict(&self, patches: &[Vec<f32>], h: usize, w: usize) -> Result<Vec<Vec<f64>>>;
}

impl DensityPredictor for WNet<f32> {
    fn predict(&self, patches: &[Vec<f32>], h: usize, w: usize) -> Result<Vec<Vec<f64>>> {
        let data = patches.iter().flat_map(|p| p.iter().copied()).collect();
        let x = Tensor4::from_vec(Shape::new(patches.len(), 3, h, w), data)?;
        let out = self.infer(&x)?;
        Ok((0..patches.len())
            .map(|n| out.density.sample(n).iter().map(|&v| v as f64).collect())
            .collect())
    }
}

/// Half-resolution density of a whole `3 x h x w` image: pad to a size the
/// model accepts, predict the nine patches, average the overlaps and crop
/// back to `ceil(h/2) x ceil(w/2)`.
pub fn predict_map<P: DensityPredictor + ?Sized>(predictor: &P, image: &[f32], h: usize, w: usize) -> Result<Vec<f64>> {
    let (ph, pw) = (patches::padded_extent(h), patches::padded_extent(w));
    let padded = patches::edge_pad(image, 3, h, w, ph, pw);
    let (cuts, layout) = split_nine_patches(&padded, 3, ph, pw)?;
    let maps = predictor.predict(&cuts, layout.patch_height, layout.patch_width)?;
    let merged = merge_patches(&maps, &layout, 2)?;
    Ok(patches::crop_top_left(&merged, pw / 2, h.div_ceil(2), w.div_ceil(2)))
}

/// Sum-pooled ground truth at `ceil(h/2) x ceil(w/2)`.
pub fn half_resolution_density(scene: &Scene) -> Result<Vec<f64>> {
    let (h2, w2) = (scene.height.div_ceil(2), scene.width.div_ceil(2));
    let even = patches::zero_pad(&scene.density, scene.height, scene.width, 2 * h2, 2 * w2);
    sum_pool_2x(2 * h2, 2 * w2, &even)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub filename: String,
    pub gt_count: f64,
    pub pred_count: f64,
    pub abs_error: f64,
    /// NaN when the map is smaller than the SSIM window.
    pub ssim: f64,
}

pub fn evaluate_scene<P: DensityPredictor + ?Sized>(predictor: &P, scene: &Scene) -> Result<ImageResult> {
    let pred = predict_map(predictor, &scene.image, scene.height, scene.width)?;
    let gt = half_resolution_density(scene)?;
    let (h2, w2) = (scene.height.div_ceil(2), scene.width.div_ceil(2));
    let s = if h2 >= metrics::SSIM_WINDOW && w2 >= metrics::SSIM_WINDOW {
        ssim(&pred, &gt, h2, w2)?
    } else {
        f64::NAN
    };
    let gt_count = scene.count() as f64;
    let pred_count: f64 = pred.iter().sum();
    Ok(ImageResult {
        filename: scene.name.clone(),
        gt_count,
        pred_count,
        abs_error: (pred_count - gt_count).abs(),
        ssim: s,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by filename.
    pub images: Vec<ImageResult>,
    pub mae: f64,
    pub rmse: f64,
    /// Over images with a defined SSIM; NaN if there are none.
    pub mean_ssim: f64,
    pub buckets: Vec<Bucket>,
}

impl EvalReport {
    /// Aggregates per-image results. The rows are sorted first, so the
    /// totals do not depend on the order results arrive in.
    pub fn from_results(mut images: Vec<ImageResult>) -> Result<Self> {
        images.sort_by(|a, b| a.filename.cmp(&b.filename));
        let pred: Vec<f64> = images.iter().map(|r| r.pred_count).collect();
        let gt: Vec<f64> = images.iter().map(|r| r.gt_count).collect();
        let errors: Vec<f64> = images.iter().map(|r| r.abs_error).collect();
        let ssims: Vec<f64> = images.iter().map(|r| r.ssim).filter(|s| !s.is_nan()).collect();
        let mean_ssim = if ssims.is_empty() {
            f64::NAN
        } else {
            ssims.iter().sum::<f64>() / ssims.len() as f64
        };
        Ok(EvalReport {
            mae: mae(&pred, &gt)?,
            rmse: rmse(&pred, &gt)?,
            mean_ssim,
            buckets: bucket_errors(&errors, &gt)?,
            images,
        })
    }

    pub fn mean_gt_count(&self) -> f64 {
        self.images.iter().map(|r| r.gt_count).sum::<f64>() / self.images.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("filename,gt_count,pred_count,abs_error,ssim\n");
        for r in &self.images {
            let _ = writeln!(out, "{},{},{},{},{}", r.filename, r.gt_count, r.pred_count, r.abs_error, r.ssim);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>10} {:>12} {:>10} {:>8}", "image", "gt", "predicted", "|error|", "ssim");
        for r in &self.images {
            let _ = writeln!(
                out,
                "{:<24} {:>10.0} {:>12.2} {:>10.2} {:>8.4}",
                r.filename, r.gt_count, r.pred_count, r.abs_error, r.ssim
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "images    {}", self.images.len());
        let _ = writeln!(out, "MAE       {:.4}", self.mae);
        let _ = writeln!(out, "RMSE      {:.4}", self.rmse);
        let _ = writeln!(out, "SSIM      {:.4}", self.mean_ssim);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<16} {:>12} {:>10} {:>8}", "gt count", "sum |error|", "share %", "images");
        for b in &self.buckets {
            let _ = writeln!(out, "{:<16} {:>12.2} {:>10.2} {:>8}", b.label(), b.abs_error, b.percent, b.images);
        }
        out
    }
}

/// Reads the rows written by [`EvalReport::to_csv`].
pub fn parse_report_csv(text: &str) -> Result<Vec<ImageResult>> {
    let bad = |line: usize, reason: String| -> Error {
        FormatError::Parse {
            format: "report csv",
            line,
            reason,
        }
        .into()
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "filename,gt_count,pred_count,abs_error,ssim")) => {}
        _ => return Err(bad(1, "missing header".into())),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 1, format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, format!("bad number `{s}`")));
            Ok(ImageResult {
                filename: f[0].to_string(),
                gt_count: num(f[1])?,
                pred_count: num(f[2])?,
                abs_error: num(f[3])?,
                ssim: num(f[4])?,
            })
        })
        .collect()
}

/// Nine-patch evaluation of every scene. Scenes are processed in parallel
/// unless the crate runs serially; the report is the same either way.
pub fn evaluate<P: DensityPredictor + ?Sized>(predictor: &P, scenes: &[Scene]) -> Result<EvalReport> {
    let results = parallel::map_indexed(scenes.len(), |i| evaluate_scene(predictor, &scenes[i]));
    EvalReport::from_results(results.into_iter().collect::<Result<Vec<_>>>()?)
}
