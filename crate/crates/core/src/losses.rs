//! Dice and binary cross-entropy losses with analytic gradients.
//!
//! Predictions and targets are `(B, C, H, W)` tensors. Every `*_grad`
//! function returns the loss together with `d loss / d pred`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_DICE_EPS: f64 = 1.0;
pub const BCE_CLAMP: f64 = 1e-7;
/// Tolerance on the per-pixel channel sum of softmax input to [`multi_dice_loss`].
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossValue {
    fn scalar(name: &str, value: f64) -> Self {
        LossValue {
            value,
            components: BTreeMap::from([(name.to_string(), value)]),
        }
    }

    pub fn describe(&self) -> String {
        self.components
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn check_shapes(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty prediction".into()));
    }
    Ok(())
}

fn check_probabilities(pred: &[f64]) -> Result<()> {
    if let Some(v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("prediction {v} outside [0, 1]")));
    }
    Ok(())
}

fn check_binary(target: &[f64]) -> Result<()> {
    if let Some(v) = target.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain(format!("target value {v} is not binary")));
    }
    Ok(())
}

/// Dice loss of one item plus its gradient, without validation.
fn dice_item(pred: &[f64], target: &[f64], eps: f64, grad: Option<&mut [f64]>, scale: f64) -> f64 {
    let inter: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    let sum: f64 = pred.iter().sum::<f64>() + target.iter().sum::<f64>();
    let num = 2.0 * inter + eps;
    let den = sum + eps;
    if let Some(g) = grad {
        for (gi, &t) in g.iter_mut().zip(target) {
            *gi += -scale * (2.0 * t * den - num) / (den * den);
        }
    }
    1.0 - num / den
}

/// `1 - (2 sum(p t) + eps) / (sum p + sum t + eps)`, averaged over the batch.
pub fn binary_dice_loss(pred: &Tensor, target: &Tensor, eps: f64) -> Result<LossValue> {
    binary_dice_loss_grad(pred, target, eps).map(|(l, _)| l)
}

pub fn binary_dice_loss_grad(pred: &Tensor, target: &Tensor, eps: f64) -> Result<(LossValue, Tensor)> {
    check_shapes(pred, target)?;
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("dice epsilon must be positive, got {eps}")));
    }
    check_probabilities(pred.data())?;
    check_binary(target.data())?;
    let n = pred.batch();
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for b in 0..n {
        total += dice_item(pred.item(b), target.item(b), eps, Some(grad.item_mut(b)), 1.0 / n as f64);
    }
    Ok((LossValue::scalar("dice", total / n as f64), grad))
}

/// Channel order of the 3-class FPN output.
pub const BACKGROUND: usize = 0;
pub const LEFT: usize = 1;
pub const RIGHT: usize = 2;

/// Mean of the left-channel and right-channel dice losses.
pub fn multi_dice_loss(
    pred: &Tensor,
    target_left: &Tensor,
    target_right: &Tensor,
    eps: f64,
) -> Result<LossValue> {
    multi_dice_loss_grad(pred, target_left, target_right, eps).map(|(l, _)| l)
}

pub fn multi_dice_loss_grad(
    pred: &Tensor,
    target_left: &Tensor,
    target_right: &Tensor,
    eps: f64,
) -> Result<(LossValue, Tensor)> {
    let [n, c, h, w] = pred.shape();
    if c != 3 {
        return Err(Error::Shape(format!("multi-dice expects 3 channels, got {c}")));
    }
    for t in [target_left, target_right] {
        if t.shape() != [n, 1, h, w] {
            return Err(Error::Shape(format!(
                "target {:?} does not match prediction {:?}",
                t.shape(),
                pred.shape()
            )));
        }
    }
    check_probabilities(pred.data())?;
    for b in 0..n {
        for i in 0..h * w {
            let s: f64 = (0..c).map(|k| pred.channel(b, k)[i]).sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Domain(format!(
                    "class probabilities sum to {s} at item {b}, pixel {i}"
                )));
            }
        }
    }
    check_binary(target_left.data())?;
    check_binary(target_right.data())?;
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("dice epsilon must be positive, got {eps}")));
    }

    let mut grad = Tensor::zeros(pred.shape());
    let mut parts = [0.0; 2];
    for (slot, (channel, target)) in [(LEFT, target_left), (RIGHT, target_right)].into_iter().enumerate() {
        for b in 0..n {
            let mut g = vec![0.0; h * w];
            parts[slot] += dice_item(
                pred.channel(b, channel),
                target.channel(b, 0),
                eps,
                Some(&mut g),
                0.5 / n as f64,
            );
            grad.channel_mut(b, channel).copy_from_slice(&g);
        }
        parts[slot] /= n as f64;
    }
    let value = 0.5 * (parts[0] + parts[1]);
    Ok((
        LossValue {
            value,
            components: BTreeMap::from([
                ("dice_left".to_string(), parts[0]),
                ("dice_right".to_string(), parts[1]),
            ]),
        },
        grad,
    ))
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<LossValue> {
    bce_loss_grad(pred, target).map(|(l, _)| l)
}

pub fn bce_loss_grad(pred: &Tensor, target: &Tensor) -> Result<(LossValue, Tensor)> {
    check_shapes(pred, target)?;
    check_binary(target.data())?;
    if pred.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("prediction contains NaN".into()));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
            *g = (-t / pc + (1.0 - t) / (1.0 - pc)) / n;
        }
    }
    Ok((LossValue::scalar("bce", total / n), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(shape: [usize; 4], v: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn dice_identity_and_empty() {
        let m = t([1, 1, 2, 2], vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(binary_dice_loss(&m, &m, 1.0).unwrap().value, 0.0);
        let z = Tensor::zeros([2, 1, 3, 3]);
        assert_eq!(binary_dice_loss(&z, &z, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn dice_half_support() {
        // |target| = 8 on 4x4, prediction covers 4 of them.
        let target: Vec<f64> = (0..16).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect();
        let pred: Vec<f64> = (0..16).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        let l = binary_dice_loss(&t([1, 1, 4, 4], pred), &t([1, 1, 4, 4], target), 1.0).unwrap();
        assert_relative_eq!(l.value, 4.0 / 13.0, epsilon = 1e-15);
    }

    #[test]
    fn dice_errors() {
        let a = Tensor::zeros([1, 1, 2, 2]);
        let b = Tensor::zeros([1, 1, 2, 3]);
        assert!(matches!(binary_dice_loss(&a, &b, 1.0), Err(Error::Shape(_))));
        let bad = Tensor::full([1, 1, 2, 2], 1.5);
        assert!(matches!(binary_dice_loss(&bad, &a, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn multi_dice_one_hot_correct_is_zero() {
        let left = t([1, 1, 1, 3], vec![1.0, 0.0, 0.0]);
        let right = t([1, 1, 1, 3], vec![0.0, 0.0, 1.0]);
        let pred = t(
            [1, 3, 1, 3],
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        );
        let l = multi_dice_loss(&pred, &left, &right, 1.0).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.components["dice_left"], 0.0);
    }

    #[test]
    fn multi_dice_rejects_unnormalised() {
        let z = Tensor::zeros([1, 1, 1, 2]);
        let pred = Tensor::full([1, 3, 1, 2], 0.5);
        assert!(matches!(multi_dice_loss(&pred, &z, &z, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn bce_reference_values() {
        let half = Tensor::full([1, 1, 2, 2], 0.5);
        let tgt = t([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(bce_loss(&half, &tgt).unwrap().value, 2f64.ln(), epsilon = 1e-15);
        assert!(bce_loss(&tgt, &tgt).unwrap().value < 1e-5);
        let p = t([1, 1, 1, 1], vec![0.25]);
        let one = t([1, 1, 1, 1], vec![1.0]);
        assert_relative_eq!(bce_loss(&p, &one).unwrap().value, -(0.25f64.ln()), epsilon = 1e-15);
    }
}
