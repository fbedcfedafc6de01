use crate::error::{Error, Result};
use crate::raster::{Mask, RgbImage};

pub const LEFT_COLOR: [f64; 3] = [1.0, 0.0, 0.0];
pub const RIGHT_COLOR: [f64; 3] = [0.0, 0.0, 1.0];
pub const UNION_COLOR: [f64; 3] = [0.0, 1.0, 0.0];

/// Which masks to paint.
#[derive(Clone, Copy, Debug)]
pub enum OverlayMasks<'a> {
    Lanes { left: &'a Mask, right: &'a Mask },
    Union(&'a Mask),
}

fn blend(img: &mut RgbImage, mask: &Mask, color: [f64; 3], alpha: f64) -> Result<()> {
    if (mask.height, mask.width) != (img.height, img.width) {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height, mask.width, img.height, img.width
        )));
    }
    for y in 0..img.height {
        for x in 0..img.width {
            if mask.get(y, x) != 0 {
                let px = img.get(y, x);
                let mut out = [0.0; 3];
                for c in 0..3 {
                    out[c] = (1.0 - alpha) * px[c] + alpha * color[c];
                }
                img.set(y, x, out);
            }
        }
    }
    Ok(())
}

/// Blend lane pixels towards fixed colours at opacity `alpha`; other pixels
/// are left untouched.
pub fn overlay(image: &RgbImage, masks: OverlayMasks<'_>, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut out = image.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    match masks {
        OverlayMasks::Lanes { left, right } => {
            blend(&mut out, left, LEFT_COLOR, alpha)?;
            blend(&mut out, right, RIGHT_COLOR, alpha)?;
        }
        OverlayMasks::Union(m) => blend(&mut out, m, UNION_COLOR, alpha)?,
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (RgbImage, Mask) {
        let mut img = RgbImage::new(2, 2);
        img.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 / 12.0);
        let mut m = Mask::new(2, 2);
        m.set(1, 0, 1);
        (img, m)
    }

    #[test]
    fn alpha_zero_is_identity() {
        let (img, m) = setup();
        assert_eq!(overlay(&img, OverlayMasks::Union(&m), 0.0).unwrap(), img);
    }

    #[test]
    fn full_opacity_paints_pure_colour() {
        let (img, m) = setup();
        let e = Mask::new(2, 2);
        let out = overlay(&img, OverlayMasks::Lanes { left: &m, right: &e }, 1.0).unwrap();
        assert_eq!(out.get(1, 0), LEFT_COLOR);
        assert_eq!(out.get(0, 0), img.get(0, 0));
    }

    #[test]
    fn half_blend_averages() {
        let (img, m) = setup();
        let out = overlay(&img, OverlayMasks::Union(&m), 0.5).unwrap();
        let orig = img.get(1, 0);
        for c in 0..3 {
            let expect = (orig[c] + UNION_COLOR[c]) / 2.0;
            assert!((out.get(1, 0)[c] - expect).abs() <= 1.0 / 255.0);
        }
    }
}
