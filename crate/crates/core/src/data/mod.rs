//! Samples, manifests, video ingest, preprocessing and augmentation.

pub mod augment;
pub mod color;
pub mod io;
pub mod lanes;
pub mod manifest;
pub mod photometric;
pub mod resize;
pub mod video;

pub use augment::{augment, AugmentationSpec, TransformKind, TransformSpec};
pub use color::{to_bgr_bytes, to_rgb_normalized};
pub use lanes::split_lanes;
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestEntry, Split, SplitCounts};
pub use resize::resize_pair;
pub use video::extract_frames;

use crate::error::{Error, Result};
use crate::raster::{Mask, RgbImage};
use crate::tensor::Tensor;

/// An RGB frame with per-lane binary ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub mask_left: Mask,
    pub mask_right: Mask,
    pub mask_union: Mask,
    pub frame_id: String,
}

impl Sample {
    /// Build a sample, deriving the union mask.
    pub fn new(
        image: RgbImage,
        mask_left: Mask,
        mask_right: Mask,
        frame_id: impl Into<String>,
    ) -> Result<Self> {
        let mask_union = mask_left.or(&mask_right)?;
        let s = Sample {
            image,
            mask_left,
            mask_right,
            mask_union,
            frame_id: frame_id.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.image.height, self.image.width);
        for (name, m) in [
            ("left", &self.mask_left),
            ("right", &self.mask_right),
            ("union", &self.mask_union),
        ] {
            if m.height != h || m.width != w {
                return Err(Error::Shape(format!(
                    "{name} mask {}x{} does not match image {h}x{w}",
                    m.height, m.width
                )));
            }
            if m.data.iter().any(|&v| v > 1) {
                return Err(Error::Domain(format!("{name} mask is not binary")));
            }
        }
        if let Some(v) = self.image.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("image value {v} outside [0, 1]")));
        }
        let union = self.mask_left.or(&self.mask_right)?;
        if union != self.mask_union {
            return Err(Error::Domain("union mask is not left OR right".into()));
        }
        Ok(())
    }

    /// Re-derive the union after the lane masks changed.
    pub fn refresh_union(&mut self) {
        self.mask_union = self
            .mask_left
            .or(&self.mask_right)
            .expect("lane masks share a shape");
    }
}

/// `(1, 3, H, W)` network input.
pub fn image_to_tensor(image: &RgbImage) -> Tensor {
    let (h, w) = (image.height, image.width);
    let mut t = Tensor::zeros([1, 3, h, w]);
    for c in 0..3 {
        let plane = t.channel_mut(0, c);
        for (i, v) in plane.iter_mut().enumerate() {
            *v = image.data[i * 3 + c];
        }
    }
    t
}

/// `(1, 1, H, W)` target tensor with values in {0, 1}.
pub fn mask_to_tensor(mask: &Mask) -> Tensor {
    Tensor::from_vec(
        [1, 1, mask.height, mask.width],
        mask.data.iter().map(|&v| f64::from(v)).collect(),
    )
    .expect("mask size matches")
}

/// Batched inputs and targets `(images, left, right, union)`.
pub fn batch_tensors(samples: &[&Sample]) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let images: Vec<Tensor> = samples.iter().map(|s| image_to_tensor(&s.image)).collect();
    let left: Vec<Tensor> = samples.iter().map(|s| mask_to_tensor(&s.mask_left)).collect();
    let right: Vec<Tensor> = samples.iter().map(|s| mask_to_tensor(&s.mask_right)).collect();
    let union: Vec<Tensor> = samples.iter().map(|s| mask_to_tensor(&s.mask_union)).collect();
    Ok((
        Tensor::stack(&images)?,
        Tensor::stack(&left)?,
        Tensor::stack(&right)?,
        Tensor::stack(&union)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_is_derived_and_checked() {
        let img = RgbImage::new(2, 2);
        let l = Mask::from_vec(2, 2, vec![1, 0, 0, 0]).unwrap();
        let r = Mask::from_vec(2, 2, vec![0, 0, 0, 1]).unwrap();
        let mut s = Sample::new(img, l, r, "f").unwrap();
        assert_eq!(s.mask_union.data, vec![1, 0, 0, 1]);
        s.mask_union.data[1] = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn mismatched_mask_is_shape_error() {
        let img = RgbImage::new(2, 2);
        let l = Mask::new(2, 2);
        let r = Mask::new(2, 3);
        assert!(matches!(Sample::new(img, l, r, "f"), Err(Error::Shape(_))));
    }

    #[test]
    fn image_tensor_is_channels_first() {
        let mut img = RgbImage::new(1, 2);
        img.set(0, 1, [0.1, 0.2, 0.3]);
        let t = image_to_tensor(&img);
        assert_eq!(t.at(0, 2, 0, 1), 0.3);
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
    }
}
