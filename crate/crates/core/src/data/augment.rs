//! Randomised augmentation with image/mask synchronisation.
//!
//! Only `shift_scale_rotate` moves pixels; it is applied with identical
//! parameters to the image (bilinear) and both masks (nearest). Every other
//! transform touches the image only.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::photometric as ph;
use super::Sample;
use crate::error::{Error, Result};
use crate::exec;
use crate::raster::{Mask, RgbImage};

pub type Range = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformKind {
    ShiftScaleRotate,
    AdditiveGaussianNoise,
    Clahe,
    RandomBrightness,
    RandomGamma,
    Sharpen,
    Blur,
    MotionBlur,
    RandomContrast,
    HueSaturationValue,
}

impl TransformKind {
    pub const ALL: [TransformKind; 10] = [
        TransformKind::ShiftScaleRotate,
        TransformKind::AdditiveGaussianNoise,
        TransformKind::Clahe,
        TransformKind::RandomBrightness,
        TransformKind::RandomGamma,
        TransformKind::Sharpen,
        TransformKind::Blur,
        TransformKind::MotionBlur,
        TransformKind::RandomContrast,
        TransformKind::HueSaturationValue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::ShiftScaleRotate => "shift_scale_rotate",
            TransformKind::AdditiveGaussianNoise => "additive_gaussian_noise",
            TransformKind::Clahe => "clahe",
            TransformKind::RandomBrightness => "random_brightness",
            TransformKind::RandomGamma => "random_gamma",
            TransformKind::Sharpen => "sharpen",
            TransformKind::Blur => "blur",
            TransformKind::MotionBlur => "motion_blur",
            TransformKind::RandomContrast => "random_contrast",
            TransformKind::HueSaturationValue => "hue_saturation_value",
        }
    }

    pub fn is_spatial(self) -> bool {
        self == TransformKind::ShiftScaleRotate
    }

    /// Default probability and parameter ranges.
    pub fn defaults(self) -> (f64, Vec<(&'static str, Range)>) {
        use TransformKind::*;
        match self {
            ShiftScaleRotate => (
                0.5,
                vec![
                    ("shift", [-0.0625, 0.0625]),
                    ("scale", [-0.1, 0.1]),
                    ("rotate", [-15.0, 15.0]),
                ],
            ),
            AdditiveGaussianNoise => (0.2, vec![("sigma", [2.55, 12.75])]),
            Clahe => (0.3, vec![("clip_limit", [4.0, 4.0]), ("tile_grid", [8.0, 8.0])]),
            RandomBrightness => (0.3, vec![("limit", [-0.2, 0.2])]),
            RandomGamma => (0.3, vec![("gamma", [0.8, 1.25])]),
            Sharpen => (0.2, vec![("alpha", [0.2, 0.5]), ("lightness", [0.5, 1.0])]),
            Blur | MotionBlur => (0.2, vec![("kernel", [3.0, 3.0])]),
            RandomContrast => (0.3, vec![("limit", [-0.2, 0.2])]),
            HueSaturationValue => (
                0.3,
                vec![
                    ("hue", [-10.0, 10.0]),
                    ("saturation", [-0.2, 0.2]),
                    ("value", [-0.2, 0.2]),
                ],
            ),
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Spec(format!("unknown transform kind '{s}'")))
    }
}

/// One transform with its probability and parameter ranges. `tile_grid`
/// is stored as `[rows, cols]` rather than a range.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub p: f64,
    pub params: BTreeMap<String, Range>,
}

impl TransformSpec {
    pub fn new(kind: TransformKind) -> Self {
        let (p, defaults) = kind.defaults();
        TransformSpec {
            kind,
            p,
            params: defaults.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_param(mut self, name: &str, range: Range) -> Self {
        self.params.insert(name.to_string(), range);
        self
    }

    pub fn param(&self, name: &str) -> Range {
        self.params[name]
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Spec(format!("{kind}: probability {} outside [0, 1]", self.p)));
        }
        let (_, defaults) = kind.defaults();
        for name in self.params.keys() {
            if !defaults.iter().any(|(d, _)| d == name) {
                return Err(Error::Spec(format!("{kind}: unknown parameter '{name}'")));
            }
        }
        for (name, _) in &defaults {
            let [lo, hi] = *self
                .params
                .get(*name)
                .ok_or_else(|| Error::Spec(format!("{kind}: missing parameter '{name}'")))?;
            let bad = |why: &str| Err(Error::Spec(format!("{kind}.{name} = [{lo}, {hi}]: {why}")));
            if !lo.is_finite() || !hi.is_finite() {
                return bad("values must be finite");
            }
            if *name == "tile_grid" {
                if lo < 1.0 || hi < 1.0 || lo.fract() != 0.0 || hi.fract() != 0.0 {
                    return bad("grid must be positive integers");
                }
                continue;
            }
            if lo > hi {
                return bad("empty range");
            }
            let ok = match *name {
                "sigma" | "lightness" => lo >= 0.0,
                "scale" => lo > -1.0,
                "gamma" | "clip_limit" => lo > 0.0,
                "alpha" => lo >= 0.0 && hi <= 1.0,
                "kernel" => lo >= 1.0 && odd_values(lo, hi).next().is_some(),
                _ => true,
            };
            if !ok {
                return bad("out of domain");
            }
        }
        Ok(())
    }

    fn to_json(&self) -> Value {
        let params: serde_json::Map<String, Value> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), json!(v)))
            .collect();
        json!({"kind": self.kind.name(), "p": self.p, "params": params})
    }

    fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Spec("transform must be an object".into()))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "kind" | "p" | "params") {
                return Err(Error::Spec(format!("unknown transform field '{key}'")));
            }
        }
        let kind: TransformKind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Spec("transform needs a string 'kind'".into()))?
            .parse()?;
        let mut spec = TransformSpec::new(kind);
        if let Some(p) = obj.get("p") {
            spec.p = p
                .as_f64()
                .ok_or_else(|| Error::Spec(format!("{kind}: 'p' must be a number")))?;
        }
        if let Some(params) = obj.get("params") {
            let params = params
                .as_object()
                .ok_or_else(|| Error::Spec(format!("{kind}: 'params' must be an object")))?;
            for (name, value) in params {
                spec.params.insert(name.clone(), parse_range(kind, name, value)?);
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_range(kind: TransformKind, name: &str, v: &Value) -> Result<Range> {
    let err = || Error::Spec(format!("{kind}.{name}: expected a number or [lo, hi]"));
    if let Some(x) = v.as_f64() {
        return Ok([x, x]);
    }
    match v.as_array().map(Vec::as_slice) {
        Some([a, b]) => Ok([a.as_f64().ok_or_else(err)?, b.as_f64().ok_or_else(err)?]),
        _ => Err(err()),
    }
}

fn odd_values(lo: f64, hi: f64) -> impl Iterator<Item = usize> {
    let start = lo.ceil().max(1.0) as usize;
    let end = hi.floor().max(0.0) as usize;
    (start..=end).filter(|k| k % 2 == 1)
}

/// Ordered list of transforms.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub transforms: Vec<TransformSpec>,
}

impl Default for AugmentationSpec {
    /// All ten transforms with default ranges and probabilities.
    fn default() -> Self {
        AugmentationSpec {
            transforms: TransformKind::ALL.into_iter().map(TransformSpec::new).collect(),
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec { transforms: Vec::new() }
    }

    pub fn single(t: TransformSpec) -> Self {
        AugmentationSpec { transforms: vec![t] }
    }

    /// Same transforms with every probability set to `p`.
    pub fn with_probability(mut self, p: f64) -> Self {
        self.transforms.iter_mut().for_each(|t| t.p = p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.transforms.iter().try_for_each(TransformSpec::validate)
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let list = v
            .as_array()
            .ok_or_else(|| Error::Spec("augmentation spec must be a JSON list".into()))?;
        Ok(AugmentationSpec {
            transforms: list.iter().map(TransformSpec::from_json).collect::<Result<_>>()?,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json_value(&serde_json::from_str(s)?)
    }

    pub fn to_json_value(&self) -> Value {
        Value::Array(self.transforms.iter().map(TransformSpec::to_json).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

impl serde::Serialize for AugmentationSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json_value().serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for AugmentationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_json_value(&v).map_err(serde::de::Error::custom)
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: Range) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Affine map about the image centre. Positive angles rotate
/// counter-clockwise in display coordinates (y pointing down).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub angle_deg: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Affine {
    /// Where output pixel `(x, y)` samples from in the input.
    pub fn source(&self, x: f64, y: f64, height: usize, width: usize) -> (f64, f64) {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let u = x - cx - self.dx;
        let v = y - cy - self.dy;
        (cx + (cos * u - sin * v) / self.scale, cy + (sin * u + cos * v) / self.scale)
    }

    /// Bilinear warp with a zero border.
    pub fn warp_image(&self, img: &RgbImage) -> RgbImage {
        let (h, w) = (img.height, img.width);
        let mut out = RgbImage::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x as f64, y as f64, h, w);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let mut px = [0.0; 3];
                for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let (ty, tx) = (y0 + oy, x0 + ox);
                        let wgt = wy * wx;
                        if wgt == 0.0 || ty < 0.0 || tx < 0.0 || ty >= h as f64 || tx >= w as f64 {
                            continue;
                        }
                        let s = img.get(ty as usize, tx as usize);
                        for c in 0..3 {
                            px[c] += wgt * s[c];
                        }
                    }
                }
                out.set(y, x, px.map(|v| v.clamp(0.0, 1.0)));
            }
        }
        out
    }

    /// Nearest-neighbour warp with a zero border.
    pub fn warp_mask(&self, mask: &Mask) -> Mask {
        let (h, w) = (mask.height, mask.width);
        let mut out = Mask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x as f64, y as f64, h, w);
                let (rx, ry) = (sx.round(), sy.round());
                if rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 {
                    out.set(y, x, u8::from(mask.get(ry as usize, rx as usize) >= 1));
                }
            }
        }
        out
    }
}

fn apply(t: &TransformSpec, sample: &mut Sample, rng: &mut ChaCha8Rng) {
    use TransformKind::*;
    let (h, w) = (sample.height(), sample.width());
    let img = &mut sample.image;
    match t.kind {
        ShiftScaleRotate => {
            let shift = t.param("shift");
            let dx = uniform(rng, shift) * w as f64;
            let dy = uniform(rng, shift) * h as f64;
            let scale = 1.0 + uniform(rng, t.param("scale"));
            let angle_deg = uniform(rng, t.param("rotate"));
            let warp = Affine { angle_deg, scale, dx, dy };
            *img = warp.warp_image(img);
            sample.mask_left = warp.warp_mask(&sample.mask_left);
            sample.mask_right = warp.warp_mask(&sample.mask_right);
            sample.refresh_union();
        }
        AdditiveGaussianNoise => {
            let sigma = uniform(rng, t.param("sigma")) / 255.0;
            ph::add_gaussian_noise(img, sigma, rng);
        }
        Clahe => {
            let clip = uniform(rng, t.param("clip_limit"));
            let [gy, gx] = t.param("tile_grid");
            ph::clahe(img, clip, (gy as usize, gx as usize));
        }
        RandomBrightness => ph::adjust_brightness(img, uniform(rng, t.param("limit"))),
        RandomGamma => ph::adjust_gamma(img, uniform(rng, t.param("gamma"))),
        RandomContrast => ph::adjust_contrast(img, uniform(rng, t.param("limit"))),
        Sharpen => {
            let alpha = uniform(rng, t.param("alpha"));
            let lightness = uniform(rng, t.param("lightness"));
            *img = ph::sharpen(img, alpha, lightness);
        }
        Blur => {
            let k = pick_kernel(rng, t.param("kernel"));
            *img = ph::box_blur(img, k);
        }
        MotionBlur => {
            let k = pick_kernel(rng, t.param("kernel"));
            let dir = rng.random_range(0..4);
            *img = ph::motion_blur(img, k, dir);
        }
        HueSaturationValue => {
            let hue = uniform(rng, t.param("hue"));
            let sat = uniform(rng, t.param("saturation"));
            let val = uniform(rng, t.param("value"));
            ph::shift_hsv(img, hue, sat, val);
        }
    }
}

fn pick_kernel(rng: &mut impl Rng, [lo, hi]: Range) -> usize {
    let odd: Vec<usize> = odd_values(lo, hi).collect();
    odd[rng.random_range(0..odd.len())]
}

/// Apply `spec` in order; each transform fires when a uniform draw falls
/// below its probability. Deterministic in `(sample, spec, seed)`.
pub fn augment(sample: &Sample, spec: &AugmentationSpec, seed: u64) -> Result<Sample> {
    spec.validate()?;
    sample.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample.clone();
    for t in &spec.transforms {
        let u: f64 = rng.random();
        if u < t.p {
            apply(t, &mut out, &mut rng);
        }
    }
    Ok(out)
}

/// Mix a base seed with two indices into an independent stream seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Originals followed by `copies` augmented variants of each sample.
pub fn expand_offline(
    samples: &[Sample],
    spec: &AugmentationSpec,
    copies: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let n = samples.len();
    let extra = exec::map_indexed(n * copies, |i| -> Result<Sample> {
        let (copy, idx) = (i / n, i % n);
        let mut s = augment(&samples[idx], spec, derive_seed(seed, idx as u64, copy as u64 + 1))?;
        s.frame_id = format!("{}_aug{}", samples[idx].frame_id, copy + 1);
        Ok(s)
    });
    let mut out = samples.to_vec();
    for s in extra {
        out.push(s?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corner_sample(n: usize) -> Sample {
        let mut l = Mask::new(n, n);
        l.set(0, 0, 1);
        Sample::new(RgbImage::new(n, n), l, Mask::new(n, n), "c").unwrap()
    }

    #[test]
    fn rotate_ninety_moves_top_left_to_bottom_left() {
        let spec = AugmentationSpec::single(
            TransformSpec::new(TransformKind::ShiftScaleRotate)
                .with_p(1.0)
                .with_param("shift", [0.0, 0.0])
                .with_param("scale", [0.0, 0.0])
                .with_param("rotate", [90.0, 90.0]),
        );
        let out = augment(&corner_sample(9), &spec, 3).unwrap();
        assert_eq!(out.mask_left.count(), 1);
        assert_eq!(out.mask_left.get(8, 0), 1);
        assert_eq!(out.mask_union.get(8, 0), 1);
    }

    #[test]
    fn unknown_kind_is_spec_error() {
        let err = AugmentationSpec::from_json_str(r#"[{"kind":"elastic","p":0.5}]"#).unwrap_err();
        assert!(matches!(err, Error::Spec(_)));
    }

    #[test]
    fn json_roundtrip_and_partial_params() {
        let spec = AugmentationSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(AugmentationSpec::from_json_str(&text).unwrap(), spec);

        let partial =
            AugmentationSpec::from_json_str(r#"[{"kind":"random_gamma","p":1,"params":{"gamma":1.1}}]"#)
                .unwrap();
        assert_eq!(partial.transforms[0].param("gamma"), [1.1, 1.1]);
    }

    #[test]
    fn invalid_ranges_rejected() {
        for text in [
            r#"[{"kind":"blur","p":1.5}]"#,
            r#"[{"kind":"blur","params":{"kernel":[2,2]}}]"#,
            r#"[{"kind":"random_gamma","params":{"gamma":[1.2,0.9]}}]"#,
            r#"[{"kind":"clahe","params":{"tiles":[8,8]}}]"#,
        ] {
            assert!(matches!(AugmentationSpec::from_json_str(text), Err(Error::Spec(_))), "{text}");
        }
    }

    #[test]
    fn offline_expansion_keeps_originals_first() {
        let s = corner_sample(6);
        let out = expand_offline(&[s.clone()], &AugmentationSpec::default(), 2, 1).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], s);
        assert_eq!(out[2].frame_id, "c_aug2");
    }
}
