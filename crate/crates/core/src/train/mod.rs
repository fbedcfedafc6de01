//! Adam training loop with per-epoch validation and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod predict;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointBundle};
pub use predict::{evaluate, fit_to_model, predict_images, LanePrediction};

use crate::data::augment::{augment, derive_seed, expand_offline};
use crate::data::{batch_tensors, AugmentationSpec, DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::losses::{bce_loss_grad, multi_dice_loss_grad, LossValue, DEFAULT_DICE_EPS};
use crate::metrics::{DEFAULT_TAU, DEFAULT_THRESHOLD};
use crate::models::{Arch, ModelGraph};
use crate::nn::Module;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MultiDice,
    Bce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::MultiDice => "multi_dice",
            LossKind::Bce => "bce",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Expand the training set once with `offline_copies` variants per sample.
    Offline,
    /// Draw a fresh augmentation of every sample each epoch.
    Online,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Stop after this many optimisation steps, even mid-epoch.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub augmentation: Option<AugmentationSpec>,
    pub augment_mode: AugmentMode,
    pub offline_copies: usize,
    pub threshold: f64,
    pub tau: f64,
}

impl TrainConfig {
    pub fn default_for(arch: Arch) -> Self {
        let (epochs, loss) = match arch {
            Arch::Fpn => (4, LossKind::MultiDice),
            Arch::UnetAttn => (10, LossKind::Bce),
        };
        TrainConfig {
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            learning_rate: 1e-4,
            epochs,
            batch_size: 8,
            seed: 0,
            loss,
            max_steps: None,
            augmentation: None,
            augment_mode: AugmentMode::Offline,
            offline_copies: 1,
            threshold: DEFAULT_THRESHOLD,
            tau: DEFAULT_TAU,
        }
    }

    pub fn validate(&self, arch: Arch) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam needs betas in [0, 1) and a positive epsilon".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) || !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("threshold and tau must lie in (0, 1)".into());
        }
        match (arch, self.loss) {
            (Arch::Fpn, LossKind::MultiDice) | (Arch::UnetAttn, LossKind::Bce) => {}
            (arch, loss) => return bad(format!("loss {loss:?} does not fit {arch} outputs")),
        }
        if let Some(spec) = &self.augmentation {
            spec.validate()?;
        }
        Ok(())
    }
}

/// One line of `history.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_iou_fg: Option<f64>,
    pub val_iou_mean: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State after the last completed epoch.
    pub last: CheckpointBundle,
    pub best_epoch: usize,
    pub step_losses: Vec<f64>,
}

/// Training order for an epoch; a pure function of `(seed, epoch)`.
pub fn shuffle_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64, 0x5348_5546));
    order.shuffle(&mut rng);
    order
}

/// Full batches per epoch; the trailing partial batch is dropped unless it
/// is the only one.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    if n == 0 {
        0
    } else {
        (n / batch_size).max(1)
    }
}

/// Loss and gradient for one batch, then one optimiser update.
pub fn train_step(
    model: &mut ModelGraph,
    optimizer: &mut Adam,
    batch: &[&Sample],
    loss: LossKind,
    step: usize,
) -> Result<LossValue> {
    let (images, left, right, union) = batch_tensors(batch)?;
    let (probs, cache) = model.forward_train(&images)?;
    if probs.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step,
            components: format!("{}=NaN (model output is not finite)", loss.name()),
        });
    }
    let (value, grad) = match loss {
        LossKind::MultiDice => multi_dice_loss_grad(&probs, &left, &right, DEFAULT_DICE_EPS)?,
        LossKind::Bce => bce_loss_grad(&probs, &union)?,
    };
    let grads_finite = grad.data().iter().all(|g| g.is_finite());
    if !value.value.is_finite() || !grads_finite {
        return Err(Error::NonFiniteLoss {
            step,
            components: value.describe(),
        });
    }
    model.zero_grad();
    model.backward(&cache, &grad)?;
    optimizer.step(model);
    Ok(value)
}

/// Train from a manifest whose relative paths resolve against `base`.
pub fn train(
    model: ModelGraph,
    manifest: &DatasetManifest,
    base: &Path,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let train_set = manifest.load_samples(base, Split::Train)?;
    let val_set = manifest.load_samples(base, Split::Val)?;
    train_samples(model, &train_set, &val_set, cfg, Some(out_dir))
}

/// Train on in-memory samples. With `out_dir`, the last and best
/// (highest validation foreground IoU, or lowest training loss without a
/// validation split) checkpoints go to `out_dir/last` and `out_dir/best`.
pub fn train_samples(
    mut model: ModelGraph,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate(model.arch())?;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let fit = |s: &[Sample]| -> Result<Vec<Sample>> {
        exec::map_indexed(s.len(), |i| fit_to_model(&s[i], &model)).into_iter().collect()
    };
    let mut base = fit(train_set)?;
    let val = fit(val_set)?;
    if let (Some(spec), AugmentMode::Offline) = (&cfg.augmentation, cfg.augment_mode) {
        base = expand_offline(&base, spec, cfg.offline_copies, cfg.seed)?;
    }

    let mut optimizer = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let per_epoch = steps_per_epoch(base.len(), cfg.batch_size);
    let mut step_losses = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut epoch = 0;
    let mut last = None;

    while epoch < cfg.epochs {
        let online;
        let epoch_set: &[Sample] = match (&cfg.augmentation, cfg.augment_mode) {
            (Some(spec), AugmentMode::Online) => {
                online = exec::map_indexed(base.len(), |i| {
                    augment(&base[i], spec, derive_seed(cfg.seed, epoch as u64 + 1, i as u64))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                &online
            }
            _ => &base,
        };
        let order = shuffle_order(epoch_set.len(), cfg.seed, epoch);
        let mut epoch_losses = Vec::with_capacity(per_epoch);
        for k in 0..per_epoch {
            if cfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                break;
            }
            let idx = &order[k * cfg.batch_size..((k + 1) * cfg.batch_size).min(order.len())];
            let batch: Vec<&Sample> = idx.iter().map(|&i| &epoch_set[i]).collect();
            let loss = train_step(&mut model, &mut optimizer, &batch, cfg.loss, step_losses.len())?;
            log::debug!("step {} loss {:.6}", step_losses.len(), loss.value);
            step_losses.push(loss.value);
            epoch_losses.push(loss.value);
        }
        if epoch_losses.is_empty() {
            break;
        }
        let train_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        let report = if val.is_empty() {
            None
        } else {
            Some(evaluate(&model, &val, cfg.threshold, cfg.tau, cfg.batch_size)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_accuracy: report.as_ref().map(|r| r.pixel.accuracy),
            val_iou_fg: report.as_ref().map(|r| r.pixel.iou_fg),
            val_iou_mean: report.as_ref().map(|r| r.pixel.iou_mean),
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, val iou_fg {}",
            record.val_iou_fg.map_or("-".into(), |v| format!("{v:.4}"))
        );
        history.push(record.clone());
        let score = record.val_iou_fg.unwrap_or(-train_loss);
        let improved = best.is_none_or(|(b, _)| score > b);
        if improved {
            best = Some((score, epoch));
        }
        let bundle = CheckpointBundle {
            model: model.clone(),
            train_config: cfg.clone(),
            epoch,
            history: history.clone(),
        };
        if let Some(dir) = out_dir {
            save_checkpoint(&bundle, &dir.join("last"))?;
            if improved {
                save_checkpoint(&bundle, &dir.join("best"))?;
            }
        }
        last = Some(bundle);
        epoch += 1;
    }

    let last = last.ok_or_else(|| Error::Config("no optimisation step was run".into()))?;
    Ok(TrainOutcome {
        last,
        best_epoch: best.map_or(0, |(_, e)| e),
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_architecture() {
        let f = TrainConfig::default_for(Arch::Fpn);
        let u = TrainConfig::default_for(Arch::UnetAttn);
        assert_eq!((f.epochs, f.loss, f.batch_size), (4, LossKind::MultiDice, 8));
        assert_eq!((u.epochs, u.loss, u.batch_size), (10, LossKind::Bce, 8));
        assert_eq!((f.learning_rate, f.beta1, f.beta2, f.adam_eps), (1e-4, 0.9, 0.999, 1e-8));
    }

    #[test]
    fn shuffle_is_pure_in_seed_and_epoch() {
        assert_eq!(shuffle_order(20, 3, 1), shuffle_order(20, 3, 1));
        assert_ne!(shuffle_order(20, 3, 1), shuffle_order(20, 3, 2));
        let mut o = shuffle_order(20, 3, 1);
        o.sort();
        assert_eq!(o, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn partial_batch_dropped_unless_alone() {
        assert_eq!(steps_per_epoch(17, 8), 2);
        assert_eq!(steps_per_epoch(8, 8), 1);
        assert_eq!(steps_per_epoch(5, 8), 1);
    }

    #[test]
    fn mismatched_loss_rejected() {
        let mut c = TrainConfig::default_for(Arch::Fpn);
        c.loss = LossKind::Bce;
        assert!(matches!(c.validate(Arch::Fpn), Err(Error::Config(_))));
    }
}
