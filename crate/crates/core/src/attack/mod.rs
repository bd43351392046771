//! Label-transformation attacks: lane offset (LOA), lane disappearance (LDA)
//! and lane rotation (LRA).

mod spline;

use serde::{Deserialize, Serialize};

pub use spline::Spline;

use crate::error::{Error, Result};
use crate::scene::{is_missing, LaneLabel, MISSING};

/// Dense samples along the rotated curve used to resample LRA labels.
pub const ROTATION_SAMPLES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Lda,
    Loa,
    Lra,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Lda => "lda",
            AttackKind::Loa => "loa",
            AttackKind::Lra => "lra",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lda" => Ok(AttackKind::Lda),
            "loa" => Ok(AttackKind::Loa),
            "lra" => Ok(AttackKind::Lra),
            other => Err(Error::Config(format!("unknown attack strategy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackStrategy {
    pub kind: AttackKind,
    /// Horizontal offset in pixels (LOA).
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Rotation in degrees (LRA). Positive turns the far part of the lane
    /// toward larger columns.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Zero-based anchor index of the pivot (LRA); 0 is the bottom row.
    #[serde(default)]
    pub rotation_anchor_index: usize,
    /// Lanes to rotate (LRA); `None` rotates every lane.
    #[serde(default)]
    pub lanes: Option<Vec<usize>>,
}

fn default_beta() -> f64 {
    60.0
}
fn default_alpha() -> f64 {
    9.0
}

impl AttackStrategy {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            beta: default_beta(),
            alpha: default_alpha(),
            rotation_anchor_index: 0,
            lanes: None,
        }
    }

    pub fn validate(&self, anchors: usize) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        if !(self.alpha.abs() < 90.0) {
            return Err(Error::Config(format!("|alpha| must be < 90, got {}", self.alpha)));
        }
        if anchors >= 2 && self.rotation_anchor_index + 1 >= anchors {
            return Err(Error::Config(format!(
                "rotation anchor index {} leaves no point to rotate among {anchors}",
                self.rotation_anchor_index
            )));
        }
        Ok(())
    }

    pub fn apply(&self, label: &LaneLabel) -> Result<LaneLabel> {
        match self.kind {
            AttackKind::Lda => Ok(apply_lda(label)),
            AttackKind::Loa => Ok(apply_loa(label, self.beta)),
            AttackKind::Lra => {
                self.validate(label.num_anchors())?;
                apply_lra(
                    label,
                    self.alpha,
                    self.rotation_anchor_index,
                    self.lanes.as_deref(),
                )
            }
        }
    }
}

/// Shifts every labelled point by `beta` columns; points leaving the image
/// become [`MISSING`].
pub fn apply_loa(label: &LaneLabel, beta: f64) -> LaneLabel {
    let width = label.width as f64;
    let mut out = label.clone();
    for lane in &mut out.lanes {
        for c in lane.iter_mut() {
            if is_missing(*c) {
                continue;
            }
            let shifted = *c + beta;
            *c = if shifted >= 0.0 && shifted < width {
                shifted
            } else {
                MISSING
            };
        }
    }
    out
}

/// Removes every lane.
pub fn apply_lda(label: &LaneLabel) -> LaneLabel {
    LaneLabel::empty(label.row_anchors.clone(), label.num_lanes(), label.width)
}

/// Fits a natural spline through the labelled points of one lane.
pub fn fit_spline(points: &[(f64, f64)]) -> Result<Spline> {
    Spline::fit(points)
}

fn lane_points(label: &LaneLabel, lane: usize) -> Vec<(usize, f64, f64)> {
    label.lanes[lane]
        .iter()
        .enumerate()
        .filter(|(_, c)| !is_missing(**c))
        .map(|(j, c)| (j, label.row_anchors[j] as f64, *c))
        .collect()
}

fn rotate(pivot: (f64, f64), point: (f64, f64), cos: f64, sin: f64) -> (f64, f64) {
    // (row, col) with rows growing downward; positive angles move points
    // above the pivot toward larger columns.
    let dr = point.0 - pivot.0;
    let dc = point.1 - pivot.1;
    (pivot.0 + dc * sin + dr * cos, pivot.1 + dc * cos - dr * sin)
}

/// Rotates the part of each lane beyond the pivot anchor by `alpha` degrees
/// around the pivot and resamples it at the original anchor rows.
///
/// The pivot is the lane's point at `anchor_index`, or its first labelled
/// point past that index when the anchor itself is unlabelled. Points up to
/// the pivot are kept verbatim. Anchor rows the original lane covered but the
/// rotated curve stops short of are continued along its end tangent.
pub fn apply_lra(
    label: &LaneLabel,
    alpha: f64,
    anchor_index: usize,
    lanes: Option<&[usize]>,
) -> Result<LaneLabel> {
    if !(alpha.abs() < 90.0) {
        return Err(Error::Config(format!("|alpha| must be < 90, got {alpha}")));
    }
    let mut out = label.clone();
    let selected: Vec<usize> = match lanes {
        Some(l) => l.to_vec(),
        None => (0..label.num_lanes()).collect(),
    };
    let (sin, cos) = alpha.to_radians().sin_cos();
    let width = label.width as f64;

    for lane in selected {
        if lane >= label.num_lanes() {
            return Err(Error::Range(format!("lane {lane} does not exist in label")));
        }
        if !label.exist[lane] {
            continue;
        }
        let pts = lane_points(label, lane);
        if pts.len() < 2 {
            if lanes.is_some() {
                return Err(Error::InsufficientPoints(pts.len()));
            }
            continue;
        }
        let Some(&(pivot_idx, pivot_row, pivot_col)) =
            pts.iter().find(|(j, _, _)| *j >= anchor_index)
        else {
            continue;
        };
        let spline = fit_spline(&pts.iter().map(|p| (p.1, p.2)).collect::<Vec<_>>())?;
        // Anchors are ordered bottom-up, so "beyond the pivot" means smaller rows.
        let top_row = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        if top_row >= pivot_row {
            continue;
        }

        let pivot = (pivot_row, pivot_col);
        let source_row =
            |s: usize| pivot_row + s as f64 / (ROTATION_SAMPLES - 1) as f64 * (top_row - pivot_row);
        let rotated_at = |row: f64| {
            let col = if row == pivot_row { pivot_col } else { spline.eval(row) };
            rotate(pivot, (row, col), cos, sin)
        };
        let poly: Vec<(f64, f64)> = (0..ROTATION_SAMPLES).map(|s| rotated_at(source_row(s))).collect();
        if poly.windows(2).any(|w| w[1].0 >= w[0].0) {
            return Err(Error::RotationDegenerate(format!(
                "lane {lane} folds past horizontal after rotating by {alpha} degrees"
            )));
        }
        let (rot_top, end_col) = *poly.last().unwrap();
        // Direction of travel at the rotated end, for anchors the original
        // lane reached but the rotated one falls just short of.
        let (end_dr, end_dc) = {
            let (dr, dc) = (-1.0, -spline.slope(top_row));
            (dc * sin + dr * cos, dc * cos - dr * sin)
        };

        for j in pivot_idx + 1..label.num_anchors() {
            let row = label.row_anchors[j] as f64;
            let col = if row > pivot_row {
                MISSING
            } else if row < rot_top {
                if row >= top_row && end_dr < 0.0 {
                    end_col + (row - rot_top) * end_dc / end_dr
                } else {
                    MISSING
                }
            } else {
                // poly rows strictly decrease; find the bracketing segment.
                // Then bisect on the source row so the result lies on the
                // rotated spline itself, not on its polyline chord.
                let k = poly.partition_point(|p| p.0 > row).clamp(1, poly.len() - 1);
                let (mut hi, mut lo) = (source_row(k - 1), source_row(k));
                for _ in 0..60 {
                    let mid = 0.5 * (hi + lo);
                    if rotated_at(mid).0 > row {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let (r0, c0) = rotated_at(hi);
                let (r1, c1) = rotated_at(lo);
                if r0 == r1 {
                    c0
                } else {
                    c0 + (row - r0) / (r1 - r0) * (c1 - c0)
                }
            };
            out.lanes[lane][j] = if !is_missing(col) && col >= 0.0 && col < width {
                col
            } else {
                MISSING
            };
        }
    }
    Ok(out)
}
