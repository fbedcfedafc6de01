use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

pub const DEFAULT_BAND: (f64, f64) = (0.70, 0.95);

/// Lateral offset of the lane midpoint from the image centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    #[serde(rename = "frame")]
    pub frame_id: String,
    #[serde(rename = "dev_px")]
    pub deviation_px: f64,
    #[serde(rename = "dev_norm")]
    pub deviation_norm: f64,
    pub valid: bool,
}

impl DeviationRecord {
    fn invalid(frame_id: &str) -> Self {
        DeviationRecord {
            frame_id: frame_id.to_string(),
            deviation_px: 0.0,
            deviation_norm: 0.0,
            valid: false,
        }
    }
}

pub fn check_band(band: (f64, f64)) -> Result<()> {
    let (lo, hi) = band;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::Argument(format!("band ({lo}, {hi}) needs 0 <= lo < hi <= 1")));
    }
    Ok(())
}

fn row_mean(mask: &Mask, y: usize) -> Option<f64> {
    let row = &mask.data[y * mask.width..(y + 1) * mask.width];
    let (sum, n) = row
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .fold((0.0, 0usize), |(s, n), (x, _)| (s + x as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Rows `floor(lo * H) .. ceil(hi * H)` form the band. Per row with both
/// lanes present the midpoint of the two mean columns is taken; the lane
/// centre is the average midpoint and `deviation_px = centre - W / 2`. The
/// normalised value divides by the average lane width over the same rows.
/// Frames with no usable row, a non-positive width or `|norm| > 2` are
/// marked invalid.
pub fn center_deviation(
    frame_id: &str,
    left: &Mask,
    right: &Mask,
    band: (f64, f64),
    image_width: usize,
) -> Result<DeviationRecord> {
    check_band(band)?;
    if !left.same_shape(right) {
        return Err(Error::Shape("left and right masks differ in shape".into()));
    }
    let h = left.height;
    let start = ((band.0 * h as f64).floor() as usize).min(h);
    let end = ((band.1 * h as f64).ceil() as usize).min(h);
    let (mut mid_sum, mut width_sum, mut rows) = (0.0, 0.0, 0usize);
    for y in start..end {
        if let (Some(l), Some(r)) = (row_mean(left, y), row_mean(right, y)) {
            mid_sum += (l + r) / 2.0;
            width_sum += r - l;
            rows += 1;
        }
    }
    if rows == 0 {
        return Ok(DeviationRecord::invalid(frame_id));
    }
    let center = mid_sum / rows as f64;
    let lane_width = width_sum / rows as f64;
    let deviation_px = center - image_width as f64 / 2.0;
    let deviation_norm = deviation_px / lane_width;
    if !(lane_width > 0.0) || deviation_norm.abs() > 2.0 {
        return Ok(DeviationRecord::invalid(frame_id));
    }
    Ok(DeviationRecord {
        frame_id: frame_id.to_string(),
        deviation_px,
        deviation_norm,
        valid: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lanes(h: usize, w: usize, lc: usize, rc: usize) -> (Mask, Mask) {
        let (mut l, mut r) = (Mask::new(h, w), Mask::new(h, w));
        for y in 0..h {
            l.set(y, lc, 1);
            r.set(y, rc, 1);
        }
        (l, r)
    }

    #[test]
    fn symmetric_lanes_have_zero_deviation() {
        let (l, r) = lanes(40, 80, 20, 60);
        let d = center_deviation("f", &l, &r, DEFAULT_BAND, 80).unwrap();
        assert!(d.valid);
        assert_eq!(d.deviation_px, 0.0);
    }

    #[test]
    fn shifted_lanes() {
        let (l, r) = lanes(40, 80, 30, 70);
        let d = center_deviation("f", &l, &r, DEFAULT_BAND, 80).unwrap();
        assert_eq!(d.deviation_px, 10.0);
        assert_eq!(d.deviation_norm, 0.25);
    }

    #[test]
    fn empty_left_in_band_is_invalid() {
        let (mut l, r) = lanes(40, 80, 20, 60);
        for y in 20..40 {
            l.set(y, 20, 0);
        }
        assert!(!center_deviation("f", &l, &r, DEFAULT_BAND, 80).unwrap().valid);
    }

    #[test]
    fn bad_band_rejected() {
        let (l, r) = lanes(4, 8, 1, 6);
        assert!(center_deviation("f", &l, &r, (0.9, 0.5), 8).is_err());
    }
}
