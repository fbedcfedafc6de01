//! Image-only (photometric) transforms. All outputs are clipped to `[0, 1]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::RgbImage;

pub fn add_gaussian_noise(img: &mut RgbImage, sigma: f64, rng: &mut impl Rng) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    img.data
        .iter_mut()
        .for_each(|v| *v = (*v + normal.sample(rng)).clamp(0.0, 1.0));
}

pub fn adjust_brightness(img: &mut RgbImage, delta: f64) {
    img.data.iter_mut().for_each(|v| *v = (*v + delta).clamp(0.0, 1.0));
}

/// Scale deviations from the image mean by `1 + delta`.
pub fn adjust_contrast(img: &mut RgbImage, delta: f64) {
    if img.data.is_empty() {
        return;
    }
    let mean = img.data.iter().sum::<f64>() / img.data.len() as f64;
    let alpha = 1.0 + delta;
    img.data
        .iter_mut()
        .for_each(|v| *v = ((*v - mean) * alpha + mean).clamp(0.0, 1.0));
}

pub fn adjust_gamma(img: &mut RgbImage, gamma: f64) {
    img.data.iter_mut().for_each(|v| *v = v.powf(gamma).clamp(0.0, 1.0));
}

/// Convolve each channel with a `k x k` kernel using replicated borders.
pub fn convolve(img: &RgbImage, kernel: &[f64], k: usize) -> RgbImage {
    let r = (k / 2) as i64;
    let (h, w) = (img.height as i64, img.width as i64);
    let mut out = RgbImage::new(img.height, img.width);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for ky in 0..k as i64 {
                let sy = (y + ky - r).clamp(0, h - 1) as usize;
                for kx in 0..k as i64 {
                    let sx = (x + kx - r).clamp(0, w - 1) as usize;
                    let wgt = kernel[(ky * k as i64 + kx) as usize];
                    if wgt == 0.0 {
                        continue;
                    }
                    let px = img.get(sy, sx);
                    for c in 0..3 {
                        acc[c] += wgt * px[c];
                    }
                }
            }
            out.set(
                y as usize,
                x as usize,
                acc.map(|v| v.clamp(0.0, 1.0)),
            );
        }
    }
    out
}

pub fn box_blur(img: &RgbImage, k: usize) -> RgbImage {
    let kernel = vec![1.0 / (k * k) as f64; k * k];
    convolve(img, &kernel, k)
}

/// Line kernel through the centre; `direction` 0..4 selects horizontal,
/// vertical, diagonal or anti-diagonal.
pub fn motion_blur(img: &RgbImage, k: usize, direction: usize) -> RgbImage {
    let mut kernel = vec![0.0; k * k];
    let c = k / 2;
    for i in 0..k {
        let (y, x) = match direction % 4 {
            0 => (c, i),
            1 => (i, c),
            2 => (i, i),
            _ => (i, k - 1 - i),
        };
        kernel[y * k + x] = 1.0 / k as f64;
    }
    convolve(img, &kernel, k)
}

/// Blend of identity and a Laplacian-style sharpening kernel.
pub fn sharpen(img: &RgbImage, alpha: f64, lightness: f64) -> RgbImage {
    let mut kernel = [-alpha; 9];
    kernel[4] = (1.0 - alpha) + alpha * (8.0 + lightness);
    convolve(img, &kernel, 3)
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Shift hue (degrees) and saturation/value (absolute, on `[0, 1]`).
pub fn shift_hsv(img: &mut RgbImage, hue: f64, sat: f64, val: f64) {
    for px in img.data.chunks_exact_mut(3) {
        let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
        let rgb = hsv_to_rgb([h + hue, (s + sat).clamp(0.0, 1.0), (v + val).clamp(0.0, 1.0)]);
        for c in 0..3 {
            px[c] = rgb[c].clamp(0.0, 1.0);
        }
    }
}

/// Contrast-limited adaptive histogram equalisation on the HSV value
/// channel, with bilinear interpolation between tile mappings.
pub fn clahe(img: &mut RgbImage, clip_limit: f64, grid: (usize, usize)) {
    const BINS: usize = 256;
    let (h, w) = (img.height, img.width);
    if h == 0 || w == 0 {
        return;
    }
    let gy = grid.0.clamp(1, h);
    let gx = grid.1.clamp(1, w);
    let th = h.div_ceil(gy);
    let tw = w.div_ceil(gx);

    let value: Vec<f64> = img
        .data
        .chunks_exact(3)
        .map(|p| p[0].max(p[1]).max(p[2]))
        .collect();
    let bin = |v: f64| ((v * (BINS - 1) as f64).round() as usize).min(BINS - 1);

    let mut luts = vec![[0.0f64; BINS]; gy * gx];
    for ty in 0..gy {
        for tx in 0..gx {
            let (y0, y1) = (ty * th, ((ty + 1) * th).min(h));
            let (x0, x1) = (tx * tw, ((tx + 1) * tw).min(w));
            let area = (y1.saturating_sub(y0) * x1.saturating_sub(x0)).max(1);
            let mut hist = [0.0f64; BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin(value[y * w + x])] += 1.0;
                }
            }
            let limit = (clip_limit * area as f64 / BINS as f64).max(1.0);
            let mut excess = 0.0;
            for c in hist.iter_mut() {
                if *c > limit {
                    excess += *c - limit;
                    *c = limit;
                }
            }
            let bonus = excess / BINS as f64;
            let lut = &mut luts[ty * gx + tx];
            let mut cdf = 0.0;
            for (b, c) in hist.iter().enumerate() {
                cdf += c + bonus;
                lut[b] = (cdf / area as f64).min(1.0);
            }
        }
    }

    let coord = |p: usize, size: usize, tiles: usize| {
        let f = (p as f64 + 0.5) / size as f64 - 0.5;
        let i0 = (f.floor().max(0.0) as usize).min(tiles - 1);
        let i1 = (i0 + 1).min(tiles - 1);
        (i0, i1, (f - i0 as f64).clamp(0.0, 1.0))
    };
    for y in 0..h {
        let (y0, y1, fy) = coord(y, th, gy);
        for x in 0..w {
            let (x0, x1, fx) = coord(x, tw, gx);
            let v = value[y * w + x];
            let b = bin(v);
            let top = luts[y0 * gx + x0][b] * (1.0 - fx) + luts[y0 * gx + x1][b] * fx;
            let bot = luts[y1 * gx + x0][b] * (1.0 - fx) + luts[y1 * gx + x1][b] * fx;
            let nv = top * (1.0 - fy) + bot * fy;
            let i = (y * w + x) * 3;
            if v > 0.0 {
                let scale = nv / v;
                for c in 0..3 {
                    img.data[i + c] = (img.data[i + c] * scale).clamp(0.0, 1.0);
                }
            } else {
                img.data[i..i + 3].iter_mut().for_each(|c| *c = nv.clamp(0.0, 1.0));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> RgbImage {
        let mut img = RgbImage::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let v = (x + y) as f64 / (h + w) as f64;
                img.set(y, x, [v, 0.5 * v, 0.25 + 0.5 * v]);
            }
        }
        img
    }

    #[test]
    fn hsv_roundtrip() {
        for rgb in [[0.2, 0.4, 0.6], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.9, 0.1, 0.5]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let mut img = RgbImage::new(5, 6);
        img.data.iter_mut().for_each(|v| *v = 0.4);
        for out in [box_blur(&img, 3), motion_blur(&img, 3, 2)] {
            assert!(out.data.iter().all(|&v| (v - 0.4).abs() < 1e-12));
        }
    }

    #[test]
    fn clahe_stays_in_range_and_changes_low_contrast_image() {
        let mut img = ramp(32, 40);
        img.data.iter_mut().for_each(|v| *v = 0.4 + 0.1 * *v);
        let before = img.clone();
        clahe(&mut img, 4.0, (8, 8));
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(img, before);
    }

    #[test]
    fn zero_sharpen_is_identity() {
        let img = ramp(6, 6);
        let out = sharpen(&img, 0.0, 1.0);
        assert!(out.data.iter().zip(&img.data).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
