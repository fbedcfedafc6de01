use super::Sample;
use crate::error::{Error, Result};
use crate::raster::{Mask, RgbImage};

/// Half-pixel-centred bilinear resize with edge clamping.
pub fn resize_image_bilinear(img: &RgbImage, oh: usize, ow: usize) -> RgbImage {
    if (oh, ow) == (img.height, img.width) {
        return img.clone();
    }
    let taps = |input: usize, output: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / output as f64;
        (0..output)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                (i0, (i0 + 1).min(input - 1), src - i0 as f64)
            })
            .collect()
    };
    let ty = taps(img.height, oh);
    let tx = taps(img.width, ow);
    let mut out = RgbImage::new(oh, ow);
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let (a, b, c, d) = (img.get(y0, x0), img.get(y0, x1), img.get(y1, x0), img.get(y1, x1));
            let mut px = [0.0; 3];
            for k in 0..3 {
                let top = a[k] * (1.0 - fx) + b[k] * fx;
                let bot = c[k] * (1.0 - fx) + d[k] * fx;
                px[k] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
            out.set(oy, ox, px);
        }
    }
    out
}

/// Nearest-neighbour resize sampling the source pixel containing each
/// destination pixel centre.
pub fn resize_mask_nearest(mask: &Mask, oh: usize, ow: usize) -> Mask {
    let idx = |d: usize, input: usize, output: usize| {
        (((d as f64 + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1)
    };
    let mut out = Mask::new(oh, ow);
    for y in 0..oh {
        let sy = idx(y, mask.height, oh);
        for x in 0..ow {
            out.set(y, x, mask.get(sy, idx(x, mask.width, ow)));
        }
    }
    out
}

/// Resize image (bilinear) and masks (nearest) to `(height, width)`.
pub fn resize_pair(sample: &Sample, target: (usize, usize)) -> Result<Sample> {
    let (oh, ow) = target;
    if oh == 0 || ow == 0 {
        return Err(Error::Argument(format!("target size {oh}x{ow} must be positive")));
    }
    if sample.height() == 0 || sample.width() == 0 {
        return Err(Error::Argument("cannot resize an empty sample".into()));
    }
    let mut out = Sample {
        image: resize_image_bilinear(&sample.image, oh, ow),
        mask_left: resize_mask_nearest(&sample.mask_left, oh, ow),
        mask_right: resize_mask_nearest(&sample.mask_right, oh, ow),
        mask_union: Mask::new(oh, ow),
        frame_id: sample.frame_id.clone(),
    };
    out.refresh_union();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize) -> Sample {
        let mut img = RgbImage::new(h, w);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 17) as f64 / 16.0;
        }
        let mut l = Mask::new(h, w);
        let mut r = Mask::new(h, w);
        for y in 0..h {
            for dx in 0..2 {
                l.set(y, w / 4 + dx, 1);
                r.set(y, 3 * w / 4 + dx, 1);
            }
        }
        Sample::new(img, l, r, "s").unwrap()
    }

    #[test]
    fn nearest_upsample_2x2() {
        let m = Mask::from_vec(2, 2, vec![1, 0, 0, 0]).unwrap();
        let up = resize_mask_nearest(&m, 4, 4);
        assert_eq!(
            up.data,
            vec![1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn halving_keeps_masks_binary() {
        let s = sample(448, 448);
        let r = resize_pair(&s, (224, 224)).unwrap();
        assert_eq!((r.height(), r.width()), (224, 224));
        r.validate().unwrap();
        assert!(r.mask_left.count() > 0);
    }

    #[test]
    fn own_size_is_identity() {
        let s = sample(24, 40);
        assert_eq!(resize_pair(&s, (24, 40)).unwrap(), s);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(matches!(resize_pair(&sample(8, 8), (0, 8)), Err(Error::Argument(_))));
    }
}
