//! Scenes with precomputed full-resolution targets, and random training
//! crops drawn from them.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{RunConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::formats::{heads, pnm::Image};
use crate::groundtruth::{gen_density, gen_reinforcement, max_pool_2x, sum_pool_2x, HeadAnnotations};
use crate::tensor::{Shape, Tensor4};

/// One annotated image with its density and reinforcement targets at full
/// resolution.
#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub height: usize,
    pub width: usize,
    /// Planar RGB in [0, 1], `3 * height * width`.
    pub image: Vec<f32>,
    pub annotations: HeadAnnotations,
    pub density: Vec<f64>,
    /// Exactly 0.0 or 1.0.
    pub reinforcement: Vec<f64>,
}

impl Scene {
    pub fn new(name: impl Into<String>, image: &Image, annotations: HeadAnnotations, cfg: &RunConfig) -> Result<Self> {
        let name = name.into();
        if (image.width, image.height) != (annotations.width, annotations.height) {
            return Err(Error::InvalidArgument {
                op: "scene",
                reason: format!(
                    "{name}: image is {}x{} but annotations declare {}x{}",
                    image.width, image.height, annotations.width, annotations.height
                ),
            });
        }
        let density = gen_density(&annotations, &cfg.kernel).values;
        let reinforcement =
            gen_reinforcement(&annotations, &cfg.reinforcement_kernel, cfg.reinforcement_threshold)?.values;
        Ok(Scene {
            name,
            height: image.height,
            width: image.width,
            image: image.to_rgb_planar(),
            annotations,
            density,
            reinforcement,
        })
    }

    pub fn count(&self) -> usize {
        self.annotations.len()
    }
}

/// Placement of a training crop in its (padded) scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub y0: usize,
    pub x0: usize,
    pub size: usize,
    pub flip: bool,
}

/// One training example: the crop and both half-resolution targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub window: CropWindow,
    /// `3 * size * size`.
    pub image: Vec<f32>,
    /// `(size / 2)^2`, sum-pooled.
    pub density: Vec<f32>,
    /// `(size / 2)^2`, max-pooled.
    pub reinforcement: Vec<f32>,
}

/// Cuts `window` out of `scene`. Past the right or bottom edge the image is
/// edge-replicated and the targets are zero.
pub fn crop_sample(scene: &Scene, window: CropWindow) -> Result<TrainSample> {
    let CropWindow { y0, x0, size, flip } = window;
    if size == 0 || size % 2 != 0 {
        return Err(Error::OddSpatial {
            op: "crop_sample",
            h: size,
            w: size,
        });
    }
    let (h, w) = (scene.height, scene.width);
    if y0 + size > h.max(size) || x0 + size > w.max(size) {
        return Err(Error::InvalidArgument {
            op: "crop_sample",
            reason: format!("window {size}x{size} at ({y0}, {x0}) exceeds the {h}x{w} scene"),
        });
    }
    // Source column of crop column `x`.
    let col = |x: usize| x0 + if flip { size - 1 - x } else { x };
    let mut image = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane = &scene.image[c * h * w..(c + 1) * h * w];
        for y in 0..size {
            let sy = (y0 + y).min(h - 1);
            image.extend((0..size).map(|x| plane[sy * w + col(x).min(w - 1)]));
        }
    }
    let window_of = |values: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            let sy = y0 + y;
            out.extend((0..size).map(|x| {
                let sx = col(x);
                if sy < h && sx < w {
                    values[sy * w + sx]
                } else {
                    0.0
                }
            }));
        }
        out
    };
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
    Ok(TrainSample {
        window,
        image,
        density: to_f32(sum_pool_2x(size, size, &window_of(&scene.density))?),
        reinforcement: to_f32(max_pool_2x(size, size, &window_of(&scene.reinforcement))?),
    })
}

/// Uniform crop offsets and a Bernoulli(`flip_prob`) flip.
pub fn random_window(scene: &Scene, cfg: &TrainConfig, rng: &mut impl Rng) -> CropWindow {
    let size = cfg.crop_size;
    let y0 = rng.random_range(0..=scene.height.saturating_sub(size));
    let x0 = rng.random_range(0..=scene.width.saturating_sub(size));
    let flip = rng.random_bool(cfg.flip_prob);
    CropWindow { y0, x0, size, flip }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor4<f32>,
    pub density: Tensor4<f32>,
    pub reinforcement: Tensor4<f32>,
    pub windows: Vec<CropWindow>,
}

impl Batch {
    pub fn from_samples(samples: &[TrainSample]) -> Result<Self> {
        let size = samples.first().map(|s| s.window.size).ok_or(Error::EmptyBatch { op: "batch" })?;
        if samples.iter().any(|s| s.window.size != size) {
            return Err(Error::InvalidArgument {
                op: "batch",
                reason: "samples have different crop sizes".into(),
            });
        }
        let n = samples.len();
        let cat = |f: &dyn Fn(&TrainSample) -> &[f32]| samples.iter().flat_map(|s| f(s).iter().copied()).collect();
        let half = Shape::new(n, 1, size / 2, size / 2);
        Ok(Batch {
            images: Tensor4::from_vec(Shape::new(n, 3, size, size), cat(&|s| &s.image))?,
            density: Tensor4::from_vec(half, cat(&|s| &s.density))?,
            reinforcement: Tensor4::from_vec(half, cat(&|s| &s.reinforcement))?,
            windows: samples.iter().map(|s| s.window).collect(),
        })
    }
}

/// One random crop from each scene in `indices`, in order. Deterministic in
/// the state of `rng`.
pub fn make_batch(scenes: &[Scene], indices: &[usize], cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Batch> {
    let samples = indices
        .iter()
        .map(|&i| {
            let scene = scenes.get(i).ok_or_else(|| Error::InvalidArgument {
                op: "make_batch",
                reason: format!("scene index {i} out of range ({} scenes)", scenes.len()),
            })?;
            crop_sample(scene, random_window(scene, cfg, rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Batch::from_samples(&samples)
}

/// Scene order for one epoch, split into batches (the last may be short).
pub fn epoch_batches(len: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Image file paired with `<stem>.heads`.
fn image_for(heads_path: &Path) -> Option<PathBuf> {
    ["pgm", "ppm", "pnm"].iter().map(|ext| heads_path.with_extension(ext)).find(|p| p.is_file())
}

/// Annotation files in `dir`, sorted by name.
pub fn list_heads(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_context(e, dir))? {
        let path = entry.map_err(|e| io_context(e, dir))?.path();
        if path.extension().is_some_and(|e| e == "heads") && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Every `<stem>.heads` in `dir` with its `<stem>.pgm|ppm|pnm` image.
pub fn load_scenes(dir: &Path, cfg: &RunConfig) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for heads_path in list_heads(dir)? {
        let image_path = image_for(&heads_path).ok_or_else(|| Error::InvalidArgument {
            op: "load_scenes",
            reason: format!("no image next to {}", heads_path.display()),
        })?;
        let with_file = |e: Error, p: &Path| Error::InvalidArgument {
            op: "load_scenes",
            reason: format!("{}: {e}", p.display()),
        };
        let ann = heads::load(&heads_path).map_err(|e| with_file(e, &heads_path))?;
        let image = Image::load(&image_path).map_err(|e| with_file(e, &image_path))?;
        let name = heads_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        scenes.push(Scene::new(name, &image, ann, cfg).map_err(|e| with_file(e, &heads_path))?);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(w: usize, h: usize, points: Vec<(f64, f64)>) -> Scene {
        let pixels = (0..w * h).map(|i| (i * 37 % 251) as u8).collect();
        let image = Image::new(w, h, 1, pixels).unwrap();
        let ann = HeadAnnotations::new(w, h, points).unwrap();
        Scene::new("s", &image, ann, &RunConfig::default()).unwrap()
    }

    fn window(y0: usize, x0: usize, size: usize, flip: bool) -> CropWindow {
        CropWindow { y0, x0, size, flip }
    }

    #[test]
    fn crop_copies_the_window() {
        let s = scene(40, 30, vec![(10.0, 10.0)]);
        let c = crop_sample(&s, window(4, 6, 16, false)).unwrap();
        for ch in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    assert_eq!(c.image[(ch * 16 + y) * 16 + x], s.image[ch * 1200 + (4 + y) * 40 + 6 + x]);
                }
            }
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let s = scene(48, 48, vec![(5.0, 7.0), (30.2, 40.9), (47.0, 0.0)]);
        let w = window(8, 12, 32, true);
        let once = crop_sample(&s, w).unwrap();
        let plain = crop_sample(&s, window(8, 12, 32, false)).unwrap();
        let flip = |v: &[f32], side: usize| -> Vec<f32> {
            v.chunks(side).flat_map(|row| row.iter().rev().copied()).collect()
        };
        assert_eq!(flip(&once.image, 32), plain.image);
        assert_eq!(flip(&once.density, 16), plain.density);
        assert_eq!(flip(&once.reinforcement, 16), plain.reinforcement);
    }

    #[test]
    fn density_crop_holds_the_window_mass() {
        let pts = vec![(20.0, 20.0), (3.0, 3.0), (45.0, 28.0), (31.5, 15.2)];
        let s = scene(48, 32, pts);
        let w = window(0, 16, 32, false);
        let c = crop_sample(&s, w).unwrap();
        // Oracle: direct sum of the full-resolution map over the window.
        let mut expect = 0.0;
        for y in 0..32 {
            for x in 16..48 {
                expect += s.density[y * 48 + x];
            }
        }
        let got: f64 = c.density.iter().map(|&v| v as f64).sum();
        assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");
        // A head well inside the window contributes its whole stamp.
        assert!(got > 1.0);
    }

    #[test]
    fn small_scene_is_edge_padded() {
        let s = scene(20, 12, vec![(19.0, 11.0)]);
        let c = crop_sample(&s, window(0, 0, 32, false)).unwrap();
        // Image: replicated last row and column.
        assert_eq!(c.image[31 * 32 + 31], s.image[11 * 20 + 19]);
        assert_eq!(c.image[5 * 32 + 25], s.image[5 * 20 + 19]);
        // Targets: zeros outside, full count inside.
        let total: f64 = c.density.iter().map(|&v| v as f64).sum();
        assert!((total - s.density.iter().sum::<f64>()).abs() < 1e-5);
        assert_eq!(c.density[15 * 16 + 15], 0.0);
        assert!(crop_sample(&s, window(1, 0, 32, false)).is_err());
    }

    #[test]
    fn targets_are_pooled_consistently() {
        let s = scene(64, 64, vec![(30.0, 30.0)]);
        let c = crop_sample(&s, window(16, 16, 32, false)).unwrap();
        assert!(c.reinforcement.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(c.reinforcement.contains(&1.0));
        // Every cell with density mass is foreground.
        for (d, r) in c.density.iter().zip(&c.reinforcement) {
            if *d > 0.0 {
                assert_eq!(*r, 1.0);
            }
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let scenes: Vec<Scene> = (0..5).map(|i| scene(70, 50, vec![(i as f64 * 10.0, 20.0)])).collect();
        let cfg = TrainConfig {
            crop_size: 32,
            ..TrainConfig::default()
        };
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let order = epoch_batches(5, 2, &mut rng);
            let b = make_batch(&scenes, &order[0], &cfg, &mut rng).unwrap();
            (order, b.windows, b.images.into_data(), b.density.into_data())
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3).1, draw(4).1);
        let (order, windows, ..) = draw(9);
        assert_eq!(order.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        for w in windows {
            assert!(w.y0 <= 50 - 32 && w.x0 <= 70 - 32);
        }
    }

    #[test]
    fn mismatched_annotation_size_is_rejected() {
        let image = Image::new(10, 10, 1, vec![0; 100]).unwrap();
        let ann = HeadAnnotations::new(12, 10, vec![]).unwrap();
        assert!(Scene::new("x", &image, ann, &RunConfig::default()).is_err());
    }
}
