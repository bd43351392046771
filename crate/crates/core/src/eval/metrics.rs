use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{is_missing, LaneLabel};

/// Default tolerance: 20 px at 1280 wide, scaled to a 160-wide image.
pub const DEFAULT_THRESHOLD_PX: f64 = 20.0 * 160.0 / 1280.0;

/// Correct and scored target points of one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCounts {
    pub correct: usize,
    pub total: usize,
}

impl std::ops::AddAssign for PointCounts {
    fn add_assign(&mut self, o: Self) {
        self.correct += o.correct;
        self.total += o.total;
    }
}

fn check_shapes(pred: &LaneLabel, target: &LaneLabel) -> Result<()> {
    if pred.num_lanes() != target.num_lanes() || pred.num_anchors() != target.num_anchors() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, target is {}x{}",
            pred.num_lanes(),
            pred.num_anchors(),
            target.num_lanes(),
            target.num_anchors()
        )));
    }
    Ok(())
}

/// A point counts when the target lane exists and the cell is labelled; it is
/// correct when the predicted lane also exists and lies within `threshold_px`.
pub fn score_points(pred: &LaneLabel, target: &LaneLabel, threshold_px: f64) -> Result<PointCounts> {
    check_shapes(pred, target)?;
    let mut c = PointCounts::default();
    for i in 0..target.num_lanes() {
        if !target.exist[i] {
            continue;
        }
        for (p, t) in pred.lanes[i].iter().zip(&target.lanes[i]) {
            if is_missing(*t) {
                continue;
            }
            c.total += 1;
            if pred.exist[i] && !is_missing(*p) && (p - t).abs() <= threshold_px {
                c.correct += 1;
            }
        }
    }
    Ok(c)
}

/// Point accuracy over a set: total correct over total scored points.
/// Scoring against attacked labels gives the LOA/LRA success rate.
pub fn score_predictions(preds: &[LaneLabel], targets: &[LaneLabel], threshold_px: f64) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            targets.len()
        )));
    }
    let mut acc = PointCounts::default();
    for (p, t) in preds.iter().zip(targets) {
        acc += score_points(p, t, threshold_px)?;
    }
    if acc.total == 0 {
        return Err(Error::UndefinedMetric("no labelled target points".into()));
    }
    Ok(acc.correct as f64 / acc.total as f64)
}

/// Fraction of lanes that exist in `originals` but are predicted absent.
pub fn score_lda_asr(preds: &[LaneLabel], originals: &[LaneLabel]) -> Result<f64> {
    if preds.len() != originals.len() {
        return Err(Error::Shape("prediction and label counts differ".into()));
    }
    let (mut gone, mut total) = (0usize, 0usize);
    for (p, o) in preds.iter().zip(originals) {
        check_shapes(p, o)?;
        for i in 0..o.num_lanes() {
            if o.exist[i] {
                total += 1;
                if !p.exist[i] {
                    gone += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no existing lanes to disappear".into()));
    }
    Ok(gone as f64 / total as f64)
}
