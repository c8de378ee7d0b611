//! Toy crowd scenes: dark elliptical blobs ("heads") on a noisy light
//! background, annotated with their exact centres.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::RunConfig;
use super::data::Scene;
use crate::error::{Error, Result};
use crate::formats::pnm::Image;
use crate::groundtruth::HeadAnnotations;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive head-count range.
    pub heads: (usize, usize),
    /// Inclusive range of the blob semi-axes, in pixels.
    pub radius: (f64, f64),
    /// Std of the per-pixel background noise (intensity in [0, 1]).
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            width: 128,
            height: 128,
            heads: (5, 50),
            radius: (1.5, 3.0),
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config(reason));
        if self.width < 2 || self.height < 2 {
            return bad(format!("scene must be at least 2x2, got {}x{}", self.width, self.height));
        }
        if self.heads.0 > self.heads.1 {
            return bad(format!("empty head range {:?}", self.heads));
        }
        let (r0, r1) = self.radius;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return bad(format!("invalid radius range {:?}", self.radius));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        Ok(())
    }
}

/// Renders one scene. Identical specs give identical output.
pub fn synth_generate(spec: &SyntheticSceneSpec) -> Result<(Image, HeadAnnotations)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = rng.random_range(spec.heads.0..=spec.heads.1);
    let background = rng.random_range(0.65..0.9);
    // Gentle illumination gradient so absolute intensity is not a cue.
    let (gy, gx) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut canvas: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / h as f64 - 0.5, (i % w) as f64 / w as f64 - 0.5);
            background + gy * y + gx * x + noise.sample(&mut rng)
        })
        .collect();

    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        // Centres stay at least half a pixel inside the frame.
        let cx = rng.random_range(0.5..w as f64 - 0.5);
        let cy = rng.random_range(0.5..h as f64 - 0.5);
        let rx = rng.random_range(spec.radius.0..=spec.radius.1);
        let ry = rng.random_range(spec.radius.0..=spec.radius.1);
        let tone = rng.random_range(0.05..0.3);
        paint_blob(&mut canvas, w, h, (cx, cy), (rx, ry), tone);
        points.push((cx, cy));
    }
    let pixels = canvas.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok((Image::new(w, h, 1, pixels)?, HeadAnnotations::new(w, h, points)?))
}

/// Blends an ellipse of intensity `tone` with a one-pixel soft rim.
fn paint_blob(canvas: &mut [f64], w: usize, h: usize, (cx, cy): (f64, f64), (rx, ry): (f64, f64), tone: f64) {
    let reach = rx.max(ry) + 1.0;
    let y_lo = (cy - reach).floor().max(0.0) as usize;
    let y_hi = ((cy + reach).ceil() as usize).min(h - 1);
    let x_lo = (cx - reach).floor().max(0.0) as usize;
    let x_hi = ((cx + reach).ceil() as usize).min(w - 1);
    let r_min = rx.min(ry);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            // Pixel (x, y) covers [x - 0.5, x + 0.5), matching the
            // annotation's round-half-up convention.
            let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
            let r = (dx * dx + dy * dy).sqrt();
            let alpha = ((1.0 - r) * r_min + 0.5).clamp(0.0, 1.0);
            let p = &mut canvas[y * w + x];
            *p = (1.0 - alpha) * *p + alpha * tone;
        }
    }
}

/// Spec of scene `index` in a corpus seeded by `seed`.
pub fn corpus_spec(base: &SyntheticSceneSpec, seed: u64, index: usize) -> SyntheticSceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    SyntheticSceneSpec {
        seed: rng.random(),
        ..*base
    }
}

/// `n` named scenes (`scene_0000`, ...), each rendered from its own stream.
pub fn synth_corpus(base: &SyntheticSceneSpec, n: usize, seed: u64) -> Result<Vec<(String, Image, HeadAnnotations)>> {
    (0..n)
        .map(|i| {
            let (image, ann) = synth_generate(&corpus_spec(base, seed, i))?;
            Ok((format!("scene_{i:04}"), image, ann))
        })
        .collect()
}

/// A synthetic corpus ready for training, ground truth built from `cfg`.
pub fn synth_scenes(base: &SyntheticSceneSpec, n: usize, seed: u64, cfg: &RunConfig) -> Result<Vec<Scene>> {
    synth_corpus(base, n, seed)?
        .into_iter()
        .map(|(name, image, ann)| Scene::new(name, &image, ann, cfg))
        .collect()
}
