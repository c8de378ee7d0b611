//! Nine overlapping half-size patches: rows and columns at
//! `{0, floor(H/4), H - H/2}`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub height: usize,
    pub width: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    /// `(row, col)` of each patch's top-left corner, row-major over the 3x3
    /// grid.
    pub offsets: [(usize, usize); 9],
    /// Number of patches covering each pixel.
    pub coverage: Vec<u8>,
}

fn starts(extent: usize) -> [usize; 3] {
    [0, extent / 4, extent - extent / 2]
}

impl PatchLayout {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidArgument {
                op: "patch_layout",
                reason: format!("image must be at least 2x2, got {height}x{width}"),
            });
        }
        let (rows, cols) = (starts(height), starts(width));
        let mut offsets = [(0, 0); 9];
        for (i, o) in offsets.iter_mut().enumerate() {
            *o = (rows[i / 3], cols[i % 3]);
        }
        PatchLayout::build(height, width, (height / 2, width / 2), offsets)
    }

    fn build(height: usize, width: usize, (ph, pw): (usize, usize), offsets: [(usize, usize); 9]) -> Result<Self> {
        let mut coverage = vec![0u8; height * width];
        for &(r, c) in &offsets {
            for y in r..r + ph {
                coverage[y * width + c..y * width + c + pw].iter_mut().for_each(|v| *v += 1);
            }
        }
        if let Some(i) = coverage.iter().position(|&v| v == 0) {
            return Err(Error::InvalidArgument {
                op: "patch_layout",
                reason: format!("pixel ({}, {}) of a {height}x{width} image is not covered", i / width, i % width),
            });
        }
        Ok(PatchLayout {
            height,
            width,
            patch_height: ph,
            patch_width: pw,
            offsets,
            coverage,
        })
    }

    /// Share of the image area each patch accounts for when overlaps are
    /// split evenly: the integral of `1 / coverage` over its footprint,
    /// divided by the image area. Sums to 1.
    pub fn contributions(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (k, &(r, c)) in self.offsets.iter().enumerate() {
            let mut s = 0.0;
            for y in r..r + self.patch_height {
                for x in c..c + self.patch_width {
                    s += 1.0 / self.coverage[y * self.width + x] as f64;
                }
            }
            out[k] = s / (self.height * self.width) as f64;
        }
        out
    }

    /// The layout seen at `1 / factor` resolution.
    pub fn downscaled(&self, factor: usize) -> Result<PatchLayout> {
        let fits = |v: usize| v.is_multiple_of(factor);
        if factor == 0
            || !fits(self.height)
            || !fits(self.width)
            || !fits(self.patch_height)
            || !fits(self.patch_width)
            || self.offsets.iter().any(|&(r, c)| !fits(r) || !fits(c))
        {
            return Err(Error::InvalidArgument {
                op: "patch_layout",
                reason: format!("{}x{} layout does not scale by 1/{factor}", self.height, self.width),
            });
        }
        let mut offsets = self.offsets;
        offsets.iter_mut().for_each(|o| *o = (o.0 / factor, o.1 / factor));
        PatchLayout::build(
            self.height / factor,
            self.width / factor,
            (self.patch_height / factor, self.patch_width / factor),
            offsets,
        )
    }
}

/// Cuts the nine patches out of a planar `channels x height x width` image.
pub fn split_nine_patches<T: Copy>(
    data: &[T],
    channels: usize,
    height: usize,
    width: usize,
) -> Result<(Vec<Vec<T>>, PatchLayout)> {
    if data.len() != channels * height * width {
        return Err(Error::Dimension {
            op: "split_nine_patches".into(),
            axis: "len",
            expected: channels * height * width,
            actual: data.len(),
        });
    }
    let layout = PatchLayout::new(height, width)?;
    let (ph, pw) = (layout.patch_height, layout.patch_width);
    let patches = layout
        .offsets
        .iter()
        .map(|&(r, c)| {
            let mut p = Vec::with_capacity(channels * ph * pw);
            for ch in 0..channels {
                let plane = &data[ch * height * width..];
                for y in r..r + ph {
                    p.extend_from_slice(&plane[y * width + c..y * width + c + pw]);
                }
            }
            p
        })
        .collect();
    Ok((patches, layout))
}

/// Averages single-channel patch maps over their overlaps. `outputs[k]` is
/// patch `k` of `layout` at `1 / factor` resolution.
pub fn merge_patches(outputs: &[Vec<f64>], layout: &PatchLayout, factor: usize) -> Result<Vec<f64>> {
    let l = if factor == 1 { layout.clone() } else { layout.downscaled(factor)? };
    let (ph, pw) = (l.patch_height, l.patch_width);
    if outputs.len() != 9 {
        return Err(Error::Dimension {
            op: "merge_patches".into(),
            axis: "patches",
            expected: 9,
            actual: outputs.len(),
        });
    }
    let mut sum = vec![0.0; l.height * l.width];
    for (out, &(r, c)) in outputs.iter().zip(&l.offsets) {
        if out.len() != ph * pw {
            return Err(Error::Dimension {
                op: "merge_patches".into(),
                axis: "patch len",
                expected: ph * pw,
                actual: out.len(),
            });
        }
        for (y, row) in out.chunks(pw).enumerate() {
            let dst = &mut sum[(r + y) * l.width + c..(r + y) * l.width + c + pw];
            dst.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
    }
    Ok(sum.iter().zip(&l.coverage).map(|(s, &n)| s / n as f64).collect())
}

/// Smallest size `>= extent` (and `>= 32`) whose half is a multiple of 16.
pub fn padded_extent(extent: usize) -> usize {
    extent.max(32).div_ceil(32) * 32
}

/// Right/bottom edge replication of a planar image to `ph x pw`.
pub fn edge_pad<T: Copy>(data: &[T], channels: usize, h: usize, w: usize, ph: usize, pw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(channels * ph * pw);
    for ch in 0..channels {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for y in 0..ph {
            let row = &plane[y.min(h - 1) * w..][..w];
            out.extend((0..pw).map(|x| row[x.min(w - 1)]));
        }
    }
    out
}

/// Zero padding of a single-channel map to `ph x pw`.
pub fn zero_pad(data: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = vec![0.0; ph * pw];
    for y in 0..h {
        out[y * pw..y * pw + w].copy_from_slice(&data[y * w..(y + 1) * w]);
    }
    out
}

/// Top-left `h x w` corner of a `_ x pw` map.
pub fn crop_top_left(data: &[f64], pw: usize, h: usize, w: usize) -> Vec<f64> {
    (0..h).flat_map(|y| data[y * pw..y * pw + w].iter().copied()).collect()
}
