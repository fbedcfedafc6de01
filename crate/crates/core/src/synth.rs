//! Procedural road scenes with exact left/right lane ground truth.
//!
//! Each lane line is a quadratic `x(t) = a t^2 + b t + c` in `t = y - horizon`,
//! drawn on every row at or below the horizon. Both lines share `a`, so their
//! separation grows linearly from the horizon to the bottom row and they never
//! touch.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::augment::derive_seed;
use crate::data::io::{ensure_dir, write_image, write_mask};
use crate::data::{save_manifest, DatasetManifest, ManifestEntry, Sample, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::raster::{Mask, RgbImage};

pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub image_size: (usize, usize),
    /// Quadratic coefficient is drawn from `[-lane_curvature, lane_curvature]`.
    pub lane_curvature: f64,
    /// Distance between the line centres at the bottom row.
    pub lane_width_px: f64,
    pub line_thickness_px: f64,
    pub texture_noise_sigma: f64,
    pub horizon_row_fraction: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams::for_size(224, 224)
    }
}

impl SceneParams {
    /// Defaults scaled to an image size.
    pub fn for_size(height: usize, width: usize) -> Self {
        SceneParams {
            image_size: (height, width),
            lane_curvature: 0.1 * width as f64 / (height.max(1) as f64).powi(2),
            lane_width_px: 0.6 * width as f64,
            line_thickness_px: (width as f64 / 50.0).round().max(2.0),
            texture_noise_sigma: 0.03,
            horizon_row_fraction: 0.45,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        let (h, w) = self.image_size;
        if h < 8 || w < 8 {
            return bad(format!("image size {h}x{w} must be at least 8x8"));
        }
        let finite = [
            self.lane_curvature,
            self.lane_width_px,
            self.line_thickness_px,
            self.texture_noise_sigma,
            self.horizon_row_fraction,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("scene parameters must be finite".into());
        }
        if self.line_thickness_px < 1.0 {
            return bad(format!("line thickness {} < 1", self.line_thickness_px));
        }
        if self.lane_width_px <= 2.0 * self.line_thickness_px {
            return bad(format!(
                "lane width {} must exceed twice the line thickness {}",
                self.lane_width_px, self.line_thickness_px
            ));
        }
        if self.texture_noise_sigma < 0.0 || self.lane_curvature < 0.0 {
            return bad("noise sigma and curvature must be non-negative".into());
        }
        if !(self.horizon_row_fraction > 0.2 && self.horizon_row_fraction < 0.8) {
            return bad(format!("horizon fraction {} outside (0.2, 0.8)", self.horizon_row_fraction));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LaneLine {
    pub fn x(&self, t: f64) -> f64 {
        (self.a * t + self.b) * t + self.c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub horizon: f64,
    pub thickness: f64,
    pub left: LaneLine,
    pub right: LaneLine,
}

impl SceneGeometry {
    /// First row drawn.
    pub fn first_row(&self) -> usize {
        self.horizon.ceil() as usize
    }
}

/// Pixels of row `y >= horizon` whose centre lies within `thickness / 2`
/// of the line.
pub fn rasterize_line(line: &LaneLine, geometry: &SceneGeometry, height: usize, width: usize) -> Mask {
    let mut mask = Mask::new(height, width);
    let half = geometry.thickness / 2.0;
    for y in geometry.first_row()..height {
        let x = line.x(y as f64 - geometry.horizon);
        let lo = (x - half - 0.5).ceil().max(0.0);
        let hi = (x + half - 0.5).floor().min(width as f64 - 1.0);
        if hi < lo {
            continue;
        }
        for col in lo as usize..=hi as usize {
            mask.set(y, col, 1);
        }
    }
    mask
}

fn scene_geometry(rng: &mut impl Rng, params: &SceneParams) -> SceneGeometry {
    let (h, w) = params.image_size;
    let horizon = params.horizon_row_fraction * h as f64;
    let span = (h as f64 - 1.0 - horizon).max(1.0);
    let lw = params.lane_width_px;
    let th = params.line_thickness_px;
    let sep_top = (0.25 * lw).max(th + 1.0);
    let a = if params.lane_curvature > 0.0 {
        rng.random_range(-params.lane_curvature..=params.lane_curvature)
    } else {
        0.0
    };
    // Keeping the offset below a quarter of (separation - thickness) puts every
    // straight-line pixel strictly on its own side of the centre column.
    let max_off = 0.25 * (sep_top - th);
    let offset = rng.random_range(-max_off..=max_off);
    let center = w as f64 / 2.0 + offset;
    let slope = (lw - sep_top) / 2.0 / span;
    SceneGeometry {
        horizon,
        thickness: th,
        left: LaneLine {
            a,
            b: -slope,
            c: center - sep_top / 2.0,
        },
        right: LaneLine {
            a,
            b: slope,
            c: center + sep_top / 2.0,
        },
    }
}

/// Render one scene. Deterministic in `(seed, params)`.
pub fn generate_scene_with_geometry(seed: u64, params: &SceneParams) -> Result<(Sample, SceneGeometry)> {
    params.validate()?;
    let (h, w) = params.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = scene_geometry(&mut rng, params);

    let road = rng.random_range(0.30..0.45);
    let sky = [
        rng.random_range(0.45..0.60),
        rng.random_range(0.60..0.75),
        rng.random_range(0.80..0.95),
    ];
    let mut image = RgbImage::new(h, w);
    for y in 0..h {
        let px = if (y as f64) < geometry.horizon {
            sky
        } else {
            let shade = road + 0.1 * (y as f64 - geometry.horizon) / h as f64;
            [shade, shade, shade * 1.02]
        };
        for x in 0..w {
            image.set(y, x, px);
        }
    }

    let left = rasterize_line(&geometry.left, &geometry, h, w);
    let right = rasterize_line(&geometry.right, &geometry, h, w);
    let left_paint = [0.95, 0.85, 0.25];
    let right_paint = [0.95, 0.95, 0.95];
    for (mask, paint) in [(&left, left_paint), (&right, right_paint)] {
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) == 1 {
                    image.set(y, x, paint);
                }
            }
        }
    }

    if params.texture_noise_sigma > 0.0 {
        let noise = Normal::new(0.0, params.texture_noise_sigma).expect("positive sigma");
        image
            .data
            .iter_mut()
            .for_each(|v| *v += noise.sample(&mut rng));
    }
    image.clamp_unit();
    let sample = Sample::new(image, left, right, format!("scene_{seed:016x}"))?;
    Ok((sample, geometry))
}

pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Sample> {
    generate_scene_with_geometry(seed, params).map(|(s, _)| s)
}

/// Validation count for `n` scenes: `max(1, floor(fraction * n))`, except
/// that a single scene goes to training.
pub fn split_sizes(n: usize, val_fraction: f64) -> (usize, usize) {
    if n <= 1 {
        return (n, 0);
    }
    let val = ((val_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    (n - val, val)
}

pub fn generate_dataset(seed: u64, n: usize, params: &SceneParams, out_dir: &Path) -> Result<DatasetManifest> {
    generate_dataset_with_split(seed, n, params, out_dir, DEFAULT_VAL_FRACTION)
}

/// Write `n` scenes under `out_dir` (`frames/`, `masks/`, `manifest.json`).
/// The last `val` scenes form the validation split.
pub fn generate_dataset_with_split(
    seed: u64,
    n: usize,
    params: &SceneParams,
    out_dir: &Path,
    val_fraction: f64,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::Argument("dataset size must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Argument(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    params.validate()?;
    let (train, val) = split_sizes(n, val_fraction);
    if val == 0 {
        log::warn!("only {n} scene(s): validation split is empty");
    }
    ensure_dir(&out_dir.join("frames"))?;
    ensure_dir(&out_dir.join("masks"))?;

    let entries = exec::map_indexed(n, |i| -> Result<ManifestEntry> {
        let mut sample = generate_scene(derive_seed(seed, i as u64, 0), params)?;
        sample.frame_id = format!("frame_{i:06}");
        let frame = PathBuf::from(format!("frames/{}.png", sample.frame_id));
        let mask_left = PathBuf::from(format!("masks/{}_left.png", sample.frame_id));
        let mask_right = PathBuf::from(format!("masks/{}_right.png", sample.frame_id));
        write_image(&out_dir.join(&frame), &sample.image)?;
        write_mask(&out_dir.join(&mask_left), &sample.mask_left)?;
        write_mask(&out_dir.join(&mask_right), &sample.mask_right)?;
        Ok(ManifestEntry {
            frame,
            mask_left,
            mask_right,
            split: if i < train { Split::Train } else { Split::Val },
        })
    });
    let manifest = DatasetManifest::new(entries.into_iter().collect::<Result<_>>()?);
    save_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let p = SceneParams::for_size(48, 64);
        assert_eq!(generate_scene(9, &p).unwrap(), generate_scene(9, &p).unwrap());
        assert_ne!(generate_scene(9, &p).unwrap(), generate_scene(10, &p).unwrap());
    }

    #[test]
    fn narrow_lane_rejected() {
        let mut p = SceneParams::for_size(48, 64);
        p.lane_width_px = 2.0 * p.line_thickness_px;
        assert!(matches!(generate_scene(0, &p), Err(Error::Argument(_))));
        p = SceneParams::for_size(48, 64);
        p.horizon_row_fraction = 0.8;
        assert!(p.validate().is_err());
    }

    #[test]
    fn split_sizes_match_rule() {
        assert_eq!(split_sizes(10, 0.1), (9, 1));
        assert_eq!(split_sizes(1, 0.1), (1, 0));
        assert_eq!(split_sizes(5, 0.1), (4, 1));
        assert_eq!(split_sizes(100, 0.1), (90, 10));
    }
}
