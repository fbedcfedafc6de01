use crate::error::{Error, Result};
use crate::raster::RgbImage;

/// Convert interleaved 8-bit BGR (OpenCV capture order) to RGB in `[0, 1]`.
pub fn to_rgb_normalized(raw: &[u8], height: usize, width: usize, channels: usize) -> Result<RgbImage> {
    if channels != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {channels}")));
    }
    if raw.len() != height * width * 3 {
        return Err(Error::Shape(format!(
            "{height}x{width}x3 buffer needs {} bytes, got {}",
            height * width * 3,
            raw.len()
        )));
    }
    let mut data = Vec::with_capacity(raw.len());
    for px in raw.chunks_exact(3) {
        data.push(px[2] as f64 / 255.0);
        data.push(px[1] as f64 / 255.0);
        data.push(px[0] as f64 / 255.0);
    }
    RgbImage::from_vec(height, width, data)
}

/// Inverse of [`to_rgb_normalized`] up to 8-bit quantisation.
pub fn to_bgr_bytes(image: &RgbImage) -> Vec<u8> {
    let rgb = image.to_bytes();
    let mut out = Vec::with_capacity(rgb.len());
    for px in rgb.chunks_exact(3) {
        out.extend_from_slice(&[px[2], px[1], px[0]]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pure_blue_lands_in_channel_two() {
        let img = to_rgb_normalized(&[255, 0, 0], 1, 1, 3).unwrap();
        assert_eq!(img.get(0, 0), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn swap_and_scale() {
        let img = to_rgb_normalized(&[10, 20, 30], 1, 1, 3).unwrap();
        assert_eq!(img.get(0, 0), [30.0 / 255.0, 20.0 / 255.0, 10.0 / 255.0]);
        let zeros = to_rgb_normalized(&[0; 12], 2, 2, 3).unwrap();
        assert!(zeros.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_channel_count_is_shape_error() {
        assert!(matches!(to_rgb_normalized(&[0; 4], 1, 1, 4), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_within_quantisation(bytes in proptest::collection::vec(any::<u8>(), 3 * 6)) {
            let img = to_rgb_normalized(&bytes, 2, 3, 3).unwrap();
            prop_assert_eq!(to_bgr_bytes(&img), bytes.clone());
            let again = to_rgb_normalized(&to_bgr_bytes(&img), 2, 3, 3).unwrap();
            for (a, b) in img.data.iter().zip(&again.data) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
    }
}
