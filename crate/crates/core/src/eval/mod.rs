//! Accuracy and attack-success scoring, stealth proxies and the two
//! countermeasures (clean fine-tuning, channel pruning).

mod metrics;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use metrics::{score_lda_asr, score_points, score_predictions, PointCounts, DEFAULT_THRESHOLD_PX};

use crate::attack::AttackKind;
use crate::detector::{train, DetectorState, TrainConfig};
use crate::error::{Error, Result};
use crate::poison::TriggeredSet;
use crate::scene::{LaneLabel, Scene};
use crate::tensor::{Image, Mask};
use crate::trigger::{env_consistency_score, TriggerSpec, SSIM_WINDOW};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub acc_clean: f64,
    pub asr: BTreeMap<String, f64>,
    pub stealth_ssim: Option<f64>,
    pub correct: usize,
    pub total: usize,
    pub config_hash: String,
}

/// First 16 hex digits of the SHA-256 of a value's JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// Predicted labels for a batch of images.
pub fn predict_labels(state: &DetectorState, images: &[&Image], row_anchors: &[usize]) -> Result<Vec<LaneLabel>> {
    Ok(state
        .forward_many(images)?
        .iter()
        .map(|p| p.to_label(row_anchors))
        .collect())
}

fn anchors_of(labels: &[LaneLabel]) -> Result<Vec<usize>> {
    labels
        .first()
        .map(|l| l.row_anchors.clone())
        .ok_or_else(|| Error::UndefinedMetric("empty evaluation set".into()))
}

/// Point accuracy and its counts on clean scenes.
pub fn clean_accuracy(state: &DetectorState, scenes: &[Scene], threshold_px: f64) -> Result<(f64, PointCounts)> {
    let images: Vec<&Image> = scenes.iter().map(|s| &s.image).collect();
    let labels: Vec<LaneLabel> = scenes.iter().map(|s| s.label.clone()).collect();
    let preds = predict_labels(state, &images, &anchors_of(&labels)?)?;
    let mut counts = PointCounts::default();
    for (p, t) in preds.iter().zip(&labels) {
        counts += score_points(p, t, threshold_px)?;
    }
    if counts.total == 0 {
        return Err(Error::UndefinedMetric("no labelled target points".into()));
    }
    Ok((counts.correct as f64 / counts.total as f64, counts))
}

/// Attack success on a triggered set: disappeared lanes for LDA, point
/// accuracy against the attacked labels for LOA and LRA.
pub fn attack_success(state: &DetectorState, set: &TriggeredSet, threshold_px: f64) -> Result<f64> {
    let images: Vec<&Image> = set.images.iter().collect();
    let preds = predict_labels(state, &images, &anchors_of(&set.originals)?)?;
    match set.kind {
        AttackKind::Lda => score_lda_asr(&preds, &set.originals),
        AttackKind::Loa | AttackKind::Lra => score_predictions(&preds, &set.attacked, threshold_px),
    }
}

/// Clean accuracy and attack success of one model.
pub fn evaluate(
    state: &DetectorState,
    clean: &[Scene],
    triggered: &TriggeredSet,
    threshold_px: f64,
    config_hash: String,
) -> Result<MetricsRecord> {
    let (acc, counts) = clean_accuracy(state, clean, threshold_px)?;
    let asr = attack_success(state, triggered, threshold_px)?;
    Ok(MetricsRecord {
        acc_clean: acc,
        asr: BTreeMap::from([(triggered.kind.name().to_string(), asr)]),
        stealth_ssim: None,
        correct: counts.correct,
        total: counts.total,
        config_hash,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub epochs: usize,
    pub asr_before: f64,
    pub asr_after: f64,
    pub acc_before: f64,
    pub acc_after: f64,
}

/// Continues training on clean samples and reports attack success and clean
/// accuracy before and after.
pub fn finetune_defense(
    state: &DetectorState,
    clean_train: &[(&Image, &LaneLabel)],
    cfg: &TrainConfig,
    clean_test: &[Scene],
    triggered: &TriggeredSet,
    threshold_px: f64,
) -> Result<(DetectorState, FinetuneReport)> {
    let asr_before = attack_success(state, triggered, threshold_px)?;
    let (acc_before, _) = clean_accuracy(state, clean_test, threshold_px)?;
    let tuned = if cfg.epochs == 0 {
        state.clone()
    } else {
        train(state, clean_train, cfg)?.0
    };
    let asr_after = attack_success(&tuned, triggered, threshold_px)?;
    let (acc_after, _) = clean_accuracy(&tuned, clean_test, threshold_px)?;
    Ok((
        tuned,
        FinetuneReport {
            epochs: cfg.epochs,
            asr_before,
            asr_after,
            acc_before,
            acc_after,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    pub pruned: usize,
    pub acc: f64,
    pub asr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Channels of the last convolution, least active first.
    pub order: Vec<usize>,
    pub rows: Vec<PruneRow>,
}

impl PruneReport {
    /// Columns `Num,ACC,ASR`, in percent.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("Num,ACC,ASR\n");
        for r in &self.rows {
            text.push_str(&format!("{},{:.2},{:.2}\n", r.pruned, 100.0 * r.acc, 100.0 * r.asr));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Zeroes the last convolution's channels cumulatively, `step` at a time,
/// lowest mean activation on the clean probe set first, and records clean
/// accuracy and attack success after each step.
pub fn prune_defense(
    state: &DetectorState,
    probe: &[&Image],
    step: usize,
    clean_test: &[Scene],
    triggered: &TriggeredSet,
    threshold_px: f64,
) -> Result<PruneReport> {
    if probe.is_empty() {
        return Err(Error::Config("pruning needs a non-empty probe set".into()));
    }
    let channels = *state.arch.conv_channels.last().unwrap();
    if step == 0 || step > channels {
        return Err(Error::Range(format!("prune step {step} must be in 1..={channels}")));
    }
    let means = state.last_conv_activation_means(probe)?;
    let mut order: Vec<usize> = (0..channels).collect();
    order.sort_by(|a, b| means[*a].total_cmp(&means[*b]).then(a.cmp(b)));

    let mut rows = Vec::new();
    let mut counts: Vec<usize> = (0..channels).step_by(step).collect();
    counts.push(channels);
    for pruned in counts {
        let mut model = state.clone();
        model.prune_last_conv(&order[..pruned])?;
        let (acc, _) = clean_accuracy(&model, clean_test, threshold_px)?;
        let asr = attack_success(&model, triggered, threshold_px)?;
        log::info!("pruned {pruned}: acc {acc:.4} asr {asr:.4}");
        rows.push(PruneRow { pruned, acc, asr });
    }
    Ok(PruneReport { order, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StealthReport {
    pub mean_ssim: f64,
    pub per_sample: Vec<f64>,
}

impl StealthReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut write = || -> std::io::Result<()> {
            writeln!(f, "sample,off_trigger_ssim")?;
            for (i, v) in self.per_sample.iter().enumerate() {
                writeln!(f, "{i},{v}")?;
            }
            f.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Region scored by the stealth proxy: everything farther than one SSIM
/// window from the trigger, so no scored window touches it.
pub fn off_trigger_mask(spec: &TriggerSpec, height: usize, width: usize) -> Mask {
    spec.mask(height, width).dilate(SSIM_WINDOW).not()
}

/// Mean off-trigger SSIM between poisoned and clean images.
pub fn stealth_report(poisoned: &[&Image], clean: &[&Image], triggers: &[TriggerSpec]) -> Result<StealthReport> {
    if poisoned.len() != clean.len() || poisoned.len() != triggers.len() || poisoned.is_empty() {
        return Err(Error::Shape("stealth report needs matching, non-empty inputs".into()));
    }
    let per_sample = poisoned
        .iter()
        .zip(clean)
        .zip(triggers)
        .map(|((p, c), t)| env_consistency_score(p, c, &off_trigger_mask(t, c.height(), c.width())))
        .collect::<Result<Vec<f64>>>()?;
    let mean_ssim = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(StealthReport { mean_ssim, per_sample })
}

/// One row of the model/attack comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub attack: String,
    pub strategy: String,
    pub acc_clean: f64,
    pub asr: f64,
}

pub fn write_eval_csv(rows: &[EvalRow], path: &Path) -> Result<()> {
    let mut text = String::from("model,attack,strategy,ACC_clean,ASR\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{:.4},{:.4}\n",
            r.model, r.attack, r.strategy, r.acc_clean, r.asr
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::MISSING;

    fn label(lanes: Vec<Vec<f64>>, exist: Vec<bool>) -> LaneLabel {
        LaneLabel {
            row_anchors: (0..lanes[0].len()).map(|j| 90 - 10 * j).collect(),
            lanes,
            exist,
            width: 160,
        }
    }

    #[test]
    fn perfect_and_boundary_exterior() {
        let t = label(vec![vec![10.0, 20.0], vec![50.0, MISSING]], vec![true, true]);
        assert_eq!(score_predictions(&[t.clone()], &[t.clone()], 2.5).unwrap(), 1.0);
        let off = label(vec![vec![13.5, 23.5], vec![53.5, MISSING]], vec![true, true]);
        assert_eq!(score_predictions(&[off], &[t.clone()], 2.5).unwrap(), 0.0);
        let at = label(vec![vec![12.5, 17.5], vec![52.5, MISSING]], vec![true, true]);
        assert_eq!(score_predictions(&[at], &[t], 2.5).unwrap(), 1.0);
    }

    #[test]
    fn three_of_four_points() {
        // Target points: (0,0)=10, (0,1)=20, (1,0)=50, (1,1)=60. The second
        // lane's second prediction misses by 4 px.
        let t = label(vec![vec![10.0, 20.0], vec![50.0, 60.0]], vec![true, true]);
        let p = label(vec![vec![11.0, 19.0], vec![52.0, 64.0]], vec![true, true]);
        let c = score_points(&p, &t, 2.5).unwrap();
        assert_eq!((c.correct, c.total), (3, 4));
        assert_eq!(score_predictions(&[p], &[t], 2.5).unwrap(), 0.75);
    }

    #[test]
    fn absent_prediction_scores_zero_and_undefined_cases() {
        let t = label(vec![vec![10.0, 20.0]], vec![true]);
        let p = label(vec![vec![10.0, 20.0]], vec![false]);
        assert_eq!(score_predictions(&[p], &[t], 2.5).unwrap(), 0.0);
        let empty = label(vec![vec![MISSING, MISSING]], vec![false]);
        assert!(matches!(
            score_predictions(&[empty.clone()], &[empty], 2.5),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn lda_asr_counts() {
        let o = label(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]], vec![true; 4]);
        let mut p = o.clone();
        assert_eq!(score_lda_asr(&[p.clone()], &[o.clone()]).unwrap(), 0.0);
        p.exist = vec![false, false, false, true];
        assert_eq!(score_lda_asr(&[p.clone()], &[o.clone()]).unwrap(), 0.75);
        p.exist = vec![false; 4];
        assert_eq!(score_lda_asr(&[p], &[o]).unwrap(), 1.0);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(a, config_hash(&serde_json::json!({"seed": 1})).unwrap());
        assert_ne!(a, config_hash(&serde_json::json!({"seed": 2})).unwrap());
        assert_eq!(a.len(), 16);
    }
}
