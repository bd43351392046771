use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{mean_loss, DetectorState, LossBreakdown, LossSelector, LossWeights};
use crate::error::{Error, Result};
use crate::eval::{score_points, PointCounts, DEFAULT_THRESHOLD_PX};
use crate::rng::rng_indexed;
use crate::scene::LaneLabel;
use crate::tensor::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Learning rate follows a half cosine from `lr` down to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub acc_threshold_px: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            batch: 16,
            seed: 0,
            loss: LossWeights::default(),
            max_grad_norm: Some(5.0),
            final_lr_fraction: 0.1,
            acc_threshold_px: DEFAULT_THRESHOLD_PX,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0
            || !(self.lr >= 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.final_lr_fraction >= 0.0)
            || self.max_grad_norm.is_some_and(|g| !(g > 0.0))
        {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_fraction + (1.0 - self.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.lr * f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Point accuracy of the predictions made during the epoch, before each update.
    pub acc: f64,
}

/// Mini-batch SGD with momentum. Batches come from a seeded shuffle per
/// epoch and gradients are reduced in sample order, so the result depends
/// only on the inputs.
pub fn train(
    initial: &DetectorState,
    samples: &[(&Image, &LaneLabel)],
    cfg: &TrainConfig,
) -> Result<(DetectorState, Vec<EpochStats>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut state = initial.clone();
    let mut velocity: Vec<Vec<f64>> = state
        .param_slices_mut()
        .iter()
        .map(|s| vec![0.0; s.len()])
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = rng_indexed(cfg.seed, "train-shuffle", epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut losses = Vec::with_capacity(samples.len());
        let mut counts = PointCounts::default();

        for idx in order.chunks(cfg.batch) {
            let images: Vec<&Image> = idx.iter().map(|&i| samples[i].0).collect();
            let targets: Vec<&LaneLabel> = idx.iter().map(|&i| samples[i].1).collect();
            let (batch_losses, preds, grads, _) =
                state.backward_batch(&images, &targets, &cfg.loss, LossSelector::Total, true, false)?;
            let batch_loss = mean_loss(&batch_losses);
            if !batch_loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("non-finite loss {:?}", batch_loss),
                });
            }
            for (p, t) in preds.iter().zip(&targets) {
                counts += score_points(&p.to_label(&t.row_anchors), t, cfg.acc_threshold_px)?;
            }
            losses.extend(batch_losses);

            let grads = grads.expect("parameter gradients requested");
            let slices = grads.slices();
            let norm = slices.iter().flat_map(|s| s.iter()).map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: "non-finite gradient".into(),
                });
            }
            let scale = match cfg.max_grad_norm {
                Some(max) if norm > max => max / norm,
                _ => 1.0,
            };
            for ((param, grad), vel) in state
                .param_slices_mut()
                .into_iter()
                .zip(slices)
                .zip(velocity.iter_mut())
            {
                for ((p, g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                    *v = cfg.momentum * *v + scale * g;
                    *p -= lr * *v;
                }
            }
        }

        let loss = mean_loss(&losses);
        let acc = if counts.total > 0 {
            counts.correct as f64 / counts.total as f64
        } else {
            0.0
        };
        log::debug!(
            "epoch {epoch}: lr {lr:.5} loss {:.4} (cls {:.4}, reg {:.4}) acc {acc:.4}",
            loss.total,
            loss.cls_loss,
            loss.reg_loss
        );
        trace.push(EpochStats { epoch, lr, loss, acc });
    }
    Ok((state, trace))
}
