//! Pixel-level and frame-level segmentation metrics.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.5;
pub const REPORT_VERSION: u32 = 1;

/// Pixel counts. `merge` is elementwise addition with identity `default()`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, other: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, rhs: Self) -> Self {
        self.merge(rhs)
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), ConfusionMatrix::merge)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou_fg: f64,
    pub iou_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLevelReport {
    #[serde(rename = "total")]
    pub total_frames: usize,
    #[serde(rename = "both")]
    pub both_detected: usize,
    #[serde(rename = "one")]
    pub one_detected: usize,
    pub acc_both: f64,
    pub acc_one: f64,
    pub tau: f64,
}

impl FrameLevelReport {
    pub fn display_acc_both(&self) -> String {
        format_percent_truncated(self.acc_both)
    }

    pub fn display_acc_one(&self) -> String {
        format_percent_truncated(self.acc_one)
    }
}

/// Serialized evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pixel: MetricReport,
    pub frame: FrameLevelReport,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Ratio as a percentage truncated (not rounded) to two decimals.
pub fn truncate_percent(ratio: f64) -> f64 {
    // The small nudge keeps exact values such as 0.5 from landing one ulp low.
    (ratio * 10_000.0 + 1e-9).floor() / 100.0
}

pub fn format_percent_truncated(ratio: f64) -> String {
    format!("{:.2}%", truncate_percent(ratio))
}

/// `1` where `prob >= threshold`.
pub fn binarize(probs: &[f64], height: usize, width: usize, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!("threshold {threshold} outside (0, 1)")));
    }
    Mask::from_vec(
        height,
        width,
        probs.iter().map(|&p| u8::from(p >= threshold)).collect(),
    )
}

pub fn confusion(pred: &Mask, target: &Mask) -> Result<ConfusionMatrix> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.height, pred.width, target.height, target.width
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in pred.data.iter().zip(&target.data) {
        match (p != 0, t != 0) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

fn ratio_or(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

pub fn pixel_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("confusion matrix is empty".into()));
    }
    let iou_fg = ratio_or(cm.tp, cm.tp + cm.fp + cm.fn_, 1.0);
    let iou_bg = ratio_or(cm.tn, cm.tn + cm.fp + cm.fn_, 1.0);
    Ok(MetricReport {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision: ratio_or(cm.tp, cm.tp + cm.fp, 0.0),
        recall: ratio_or(cm.tp, cm.tp + cm.fn_, 0.0),
        iou_fg,
        iou_mean: (iou_fg + iou_bg) / 2.0,
    })
}

/// Foreground IoU of two masks; two empty masks score 1.
pub fn mask_iou(pred: &Mask, target: &Mask) -> Result<f64> {
    let cm = confusion(pred, target)?;
    Ok(ratio_or(cm.tp, cm.tp + cm.fp + cm.fn_, 1.0))
}

/// A lane counts as detected when its IoU is at least `tau`.
pub fn frame_lane_accuracy(per_frame: &[(f64, f64)], tau: f64) -> Result<FrameLevelReport> {
    if per_frame.is_empty() {
        return Err(Error::Argument("no frames to evaluate".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Argument(format!("tau {tau} outside (0, 1)")));
    }
    if let Some(bad) = per_frame
        .iter()
        .find(|(l, r)| !(0.0..=1.0).contains(l) || !(0.0..=1.0).contains(r))
    {
        return Err(Error::Argument(format!("IoU pair {bad:?} outside [0, 1]")));
    }
    let (mut both, mut one) = (0, 0);
    for &(l, r) in per_frame {
        let hits = usize::from(l >= tau) + usize::from(r >= tau);
        if hits == 2 {
            both += 1;
        }
        if hits >= 1 {
            one += 1;
        }
    }
    let total = per_frame.len();
    Ok(FrameLevelReport {
        total_frames: total,
        both_detected: both,
        one_detected: one,
        acc_both: both as f64 / total as f64,
        acc_one: one as f64 / total as f64,
        tau,
    })
}

/// Describe how far a quoted IoU lies from the foreground and mean IoU
/// recomputed from the confusion matrix.
pub fn iou_gap_note(quoted_iou: f64, pixel: &MetricReport) -> String {
    format!(
        "quoted IoU {:.2}% vs recomputed mean IoU {:.2}% (gap {:+.2} points); foreground IoU {:.2}%",
        100.0 * quoted_iou,
        100.0 * pixel.iou_mean,
        100.0 * (pixel.iou_mean - quoted_iou),
        100.0 * pixel.iou_fg
    )
}

/// Build a matrix over `total` pixels that realises the given prevalence,
/// recall and precision as closely as integer counts allow.
pub fn confusion_from_rates(total: u64, prevalence: f64, recall: f64, precision: f64) -> ConfusionMatrix {
    let positives = (total as f64 * prevalence).round() as u64;
    let tp = (positives as f64 * recall).round() as u64;
    let fn_ = positives - tp;
    let fp = if precision > 0.0 {
        (tp as f64 / precision - tp as f64).round() as u64
    } else {
        0
    };
    ConfusionMatrix {
        tp,
        fp,
        fn_,
        tn: total - positives - fp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mask(rows: &[&[u8]]) -> Mask {
        Mask::from_vec(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn binarize_uses_inclusive_threshold() {
        let m = binarize(&[0.4, 0.5, 0.6], 1, 3, 0.5).unwrap();
        assert_eq!(m.data, vec![0, 1, 1]);
        assert!(binarize(&[0.0; 4], 2, 2, 0.5).unwrap().is_empty());
        assert!(binarize(&[0.0], 1, 1, 1.0).is_err());
    }

    #[test]
    fn identity_and_complement() {
        let a = mask(&[&[1, 0], &[0, 1]]);
        let cm = confusion(&a, &a).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        let not_a = mask(&[&[0, 1], &[1, 0]]);
        let cm = confusion(&not_a, &a).unwrap();
        assert_eq!((cm.tp, cm.tn), (0, 0));
    }

    #[test]
    fn hand_counted_4x4() {
        let pred = mask(&[&[1, 1, 0, 0], &[0, 1, 0, 0], &[0, 0, 0, 1], &[0, 0, 0, 0]]);
        let tgt = mask(&[&[1, 0, 0, 0], &[0, 1, 1, 0], &[0, 0, 0, 0], &[1, 0, 0, 0]]);
        let cm = confusion(&pred, &tgt).unwrap();
        // tp: (0,0),(1,1); fp: (0,1),(2,3); fn: (1,2),(3,0)
        assert_eq!(cm, ConfusionMatrix { tp: 2, fp: 2, fn_: 2, tn: 10 });
    }

    #[test]
    fn direct_evaluation_example() {
        let r = pixel_metrics(&ConfusionMatrix { tp: 1, fp: 1, fn_: 2, tn: 6 }).unwrap();
        assert_relative_eq!(r.precision, 0.5);
        assert_relative_eq!(r.recall, 1.0 / 3.0);
        assert_relative_eq!(r.iou_fg, 0.25);
        assert_relative_eq!(r.accuracy, 0.7);
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let r = pixel_metrics(&ConfusionMatrix { tp: 5, fp: 0, fn_: 0, tn: 11 }).unwrap();
        assert_eq!(
            r,
            MetricReport { accuracy: 1.0, precision: 1.0, recall: 1.0, iou_fg: 1.0, iou_mean: 1.0 }
        );
        assert!(pixel_metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn truncation_display_rule() {
        assert_eq!(format_percent_truncated(113.0 / 129.0), "87.59%");
        assert_eq!(format_percent_truncated(117.0 / 129.0), "90.69%");
        assert_eq!(format_percent_truncated(1.0), "100.00%");
        assert_eq!(format_percent_truncated(0.5), "50.00%");
    }

    #[test]
    fn frame_level_edge_cases() {
        let r = frame_lane_accuracy(&[(0.4, 0.6)], 0.5).unwrap();
        assert_eq!((r.both_detected, r.one_detected), (0, 1));
        let r = frame_lane_accuracy(&[(1.0, 1.0); 7], 0.5).unwrap();
        assert_eq!((r.acc_both, r.acc_one), (1.0, 1.0));
        assert!(frame_lane_accuracy(&[], 0.5).is_err());
    }

    #[test]
    fn report_json_field_names() {
        let frame = frame_lane_accuracy(&[(1.0, 0.0)], 0.5).unwrap();
        let pixel = pixel_metrics(&ConfusionMatrix { tp: 1, fp: 0, fn_: 0, tn: 1 }).unwrap();
        let v = serde_json::to_value(EvalReport { pixel, frame, version: REPORT_VERSION, notes: Vec::new() }).unwrap();
        for key in ["total", "both", "one", "acc_both", "acc_one", "tau"] {
            assert!(v["frame"].get(key).is_some(), "{key}");
        }
        for key in ["accuracy", "precision", "recall", "iou_fg", "iou_mean"] {
            assert!(v["pixel"].get(key).is_some(), "{key}");
        }
        assert_eq!(v["version"], 1);
    }
}
