//! Synthetic road scenes with exact lane ground truth, and the TuSimple-style
//! dataset container.

mod dataset;
mod synth;

use serde::{Deserialize, Serialize};

pub use dataset::{read_dataset, write_dataset, DatasetManifest, ManifestEntry, ANNOTATION_FILE, MANIFEST_FILE};
pub use synth::{generate_scene, generate_scenes, GeneratorConfig, LightingMode};

use crate::error::{Error, Result};
use crate::tensor::{Image, Mask};

/// Column value of an unlabelled point, as in TuSimple annotations.
pub const MISSING: f64 = -2.0;

#[inline]
pub fn is_missing(col: f64) -> bool {
    col == MISSING
}

/// Row-anchor lane annotation: `lanes[i][j]` is the column of lane `i` at
/// image row `row_anchors[j]`, or [`MISSING`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneLabel {
    pub row_anchors: Vec<usize>,
    pub lanes: Vec<Vec<f64>>,
    pub exist: Vec<bool>,
    pub width: usize,
}

impl LaneLabel {
    pub fn empty(row_anchors: Vec<usize>, n: usize, width: usize) -> Self {
        let m = row_anchors.len();
        Self {
            row_anchors,
            lanes: vec![vec![MISSING; m]; n],
            exist: vec![false; n],
            width,
        }
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.row_anchors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.row_anchors.len();
        if self.lanes.len() != self.exist.len() {
            return Err(Error::Shape(format!(
                "{} lanes but {} exist flags",
                self.lanes.len(),
                self.exist.len()
            )));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.len() != m {
                return Err(Error::Shape(format!(
                    "lane {i} has {} points, expected {m}",
                    lane.len()
                )));
            }
            for &c in lane {
                if is_missing(c) {
                    continue;
                }
                if !self.exist[i] {
                    return Err(Error::Shape(format!(
                        "lane {i} is flagged absent but has coordinates"
                    )));
                }
                if !(c >= 0.0 && c < self.width as f64) {
                    return Err(Error::Range(format!(
                        "lane {i} column {c} outside [0, {})",
                        self.width
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of labelled (existing, non-missing) points.
    pub fn valid_points(&self) -> usize {
        self.lanes
            .iter()
            .zip(&self.exist)
            .filter(|(_, e)| **e)
            .map(|(l, _)| l.iter().filter(|c| !is_missing(**c)).count())
            .sum()
    }
}

/// One dataset sample: the image, its lanes and the ground-truth masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub label: LaneLabel,
    pub road_mask: Mask,
    pub lane_mask: Mask,
    pub env_mask: Mask,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let (h, w, _) = self.image.shape();
        for (name, m) in [
            ("road", &self.road_mask),
            ("lane", &self.lane_mask),
            ("env", &self.env_mask),
        ] {
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::Shape(format!("{name} mask does not match image")));
            }
        }
        if self.label.width != w {
            return Err(Error::Shape("label width does not match image".into()));
        }
        self.label.validate()
    }
}
