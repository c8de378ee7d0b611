//! Separable discrete Gaussian stamps.

/// Unnormalized taps `exp(-d^2 / 2 sigma^2)` for `d` in `-r..=r`,
/// `r = window / 2`.
pub fn gaussian_1d(sigma: f64, window: usize) -> Vec<f64> {
    let r = (window / 2) as isize;
    let denom = 2.0 * sigma * sigma;
    (-r..=r).map(|d| (-((d * d) as f64) / denom).exp()).collect()
}

/// Taps divided by their in-bounds mass for a stamp centred at `center`
/// on an axis of length `extent`. The mass is accumulated outward from the
/// centre pairing `+k` with `-k`, so mirrored centres get identical weights.
pub fn normalized_stamp_axis(center: usize, extent: usize, g: &[f64]) -> Vec<f64> {
    let r = g.len() / 2;
    let inside = |d: isize| {
        let p = center as isize + d;
        p >= 0 && p < extent as isize
    };
    let mut mass = g[r];
    for k in 1..=r {
        let m = inside(k as isize) as u8 + inside(-(k as isize)) as u8;
        mass += g[r + k] * m as f64;
    }
    g.iter().map(|&v| v / mass).collect()
}

/// Adds the outer product `gy x gx` centred at `(py, px)`, clipped to the map.
pub(crate) fn stamp(values: &mut [f64], h: usize, w: usize, (py, px): (usize, usize), gy: &[f64], gx: &[f64]) {
    let (ry, rx) = ((gy.len() / 2) as isize, (gx.len() / 2) as isize);
    let y0 = (py as isize - ry).max(0) as usize;
    let y1 = (py as isize + ry).min(h as isize - 1) as usize;
    let x0 = (px as isize - rx).max(0) as usize;
    let x1 = (px as isize + rx).min(w as isize - 1) as usize;
    for y in y0..=y1 {
        let wy = gy[(y as isize - py as isize + ry) as usize];
        let row = &mut values[y * w..(y + 1) * w];
        for x in x0..=x1 {
            row[x] += wy * gx[(x as isize - px as isize + rx) as usize];
        }
    }
}

/// A stamp whose in-bounds mass is 1.
pub(crate) fn stamp_renormalized(values: &mut [f64], h: usize, w: usize, pixel: (usize, usize), g: &[f64]) {
    let gy = normalized_stamp_axis(pixel.0, h, g);
    let gx = normalized_stamp_axis(pixel.1, w, g);
    stamp(values, h, w, pixel, &gy, &gx);
}
