//! Batched inference, mask extraction and evaluation.

use crate::data::lanes::split_lanes;
use crate::data::resize::resize_mask_nearest;
use crate::data::{image_to_tensor, resize_pair, Sample};
use crate::error::{Error, Result};
use crate::losses::{LEFT, RIGHT};
use crate::metrics::{
    binarize, confusion, frame_lane_accuracy, mask_iou, pixel_metrics, ConfusionMatrix, EvalReport,
    REPORT_VERSION,
};
use crate::models::{Arch, ModelGraph};
use crate::raster::{Mask, RgbImage};
use crate::tensor::Tensor;

/// Binary masks predicted for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LanePrediction {
    pub left: Mask,
    pub right: Mask,
    pub union: Mask,
}

impl LanePrediction {
    /// Nearest-neighbour resize of all three masks.
    pub fn resized(&self, height: usize, width: usize) -> LanePrediction {
        LanePrediction {
            left: resize_mask_nearest(&self.left, height, width),
            right: resize_mask_nearest(&self.right, height, width),
            union: resize_mask_nearest(&self.union, height, width),
        }
    }
}

/// Resize a sample to the model's input size when it differs.
pub fn fit_to_model(sample: &Sample, model: &ModelGraph) -> Result<Sample> {
    let [h, w] = model.config().input_size;
    if (sample.height(), sample.width()) == (h, w) {
        Ok(sample.clone())
    } else {
        resize_pair(sample, (h, w))
    }
}

/// Turn per-pixel probabilities of item `b` into lane masks. The U-Net
/// predicts one lane mask, which is split into left/right by component.
pub fn masks_from_output(arch: Arch, probs: &Tensor, b: usize, threshold: f64) -> Result<LanePrediction> {
    let (h, w) = (probs.height(), probs.width());
    match arch {
        Arch::Fpn => {
            let left = binarize(probs.channel(b, LEFT), h, w, threshold)?;
            let right = binarize(probs.channel(b, RIGHT), h, w, threshold)?;
            let union = left.or(&right)?;
            Ok(LanePrediction { left, right, union })
        }
        Arch::UnetAttn => {
            let union = binarize(probs.channel(b, 0), h, w, threshold)?;
            let (left, right) = split_lanes(&union);
            Ok(LanePrediction { left, right, union })
        }
    }
}

/// Predict masks for images already at the model's input size.
pub fn predict_images(
    model: &ModelGraph,
    images: &[&RgbImage],
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<LanePrediction>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let batch: Vec<Tensor> = chunk.iter().map(|img| image_to_tensor(img)).collect();
        let probs = model.forward(&Tensor::stack(&batch)?)?;
        for b in 0..chunk.len() {
            out.push(masks_from_output(model.arch(), &probs, b, threshold)?);
        }
    }
    Ok(out)
}

/// Pixel metrics on the union mask and frame-level lane accuracy on the
/// per-lane IoUs. Samples are resized to the model input first.
pub fn evaluate(
    model: &ModelGraph,
    samples: &[Sample],
    threshold: f64,
    tau: f64,
    batch_size: usize,
) -> Result<EvalReport> {
    let fitted: Vec<Sample> = samples
        .iter()
        .map(|s| fit_to_model(s, model))
        .collect::<Result<_>>()?;
    let images: Vec<&RgbImage> = fitted.iter().map(|s| &s.image).collect();
    let preds = predict_images(model, &images, threshold, batch_size)?;
    report_from_predictions(&preds, &fitted, tau)
}

/// Pixel metrics on union masks plus frame-level lane accuracy. Predictions
/// must match their targets in size.
pub fn report_from_predictions(preds: &[LanePrediction], targets: &[Sample], tau: f64) -> Result<EvalReport> {
    if preds.len() != targets.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    let mut per_frame = Vec::with_capacity(preds.len());
    for (p, s) in preds.iter().zip(targets) {
        cm = cm + confusion(&p.union, &s.mask_union)?;
        per_frame.push((mask_iou(&p.left, &s.mask_left)?, mask_iou(&p.right, &s.mask_right)?));
    }
    Ok(EvalReport {
        pixel: pixel_metrics(&cm)?,
        frame: frame_lane_accuracy(&per_frame, tau)?,
        version: REPORT_VERSION,
        notes: Vec::new(),
    })
}
