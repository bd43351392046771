//! Trigger placement: slide a window over the road mask and keep the
//! position whose heatmap mass is largest.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::HeatMap;
use crate::rng::Rng;
use crate::tensor::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateWindow {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub score: Option<f64>,
    pub inside_fraction: f64,
}

impl CandidateWindow {
    pub fn mask(&self, height: usize, width: usize) -> Mask {
        Mask::rect(height, width, self.row, self.col, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementConfig {
    pub window: (usize, usize),
    pub stride: usize,
    pub min_inside: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            window: (16, 16),
            stride: 4,
            min_inside: 1.0,
        }
    }
}

/// Summed-area table with one row and column of zero padding.
struct Integral {
    width: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(height: usize, width: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let w1 = width + 1;
        let mut sums = vec![0.0; (height + 1) * w1];
        for r in 0..height {
            let mut row_sum = 0.0;
            for c in 0..width {
                row_sum += value(r, c);
                sums[(r + 1) * w1 + c + 1] = sums[r * w1 + c + 1] + row_sum;
            }
        }
        Self { width: w1, sums }
    }

    fn window(&self, row: usize, col: usize, h: usize, w: usize) -> f64 {
        let at = |r: usize, c: usize| self.sums[r * self.width + c];
        at(row + h, col + w) - at(row, col + w) - at(row + h, col) + at(row, col)
    }
}

/// All stride-aligned windows whose road coverage is at least `min_inside`,
/// in row-major order of their origins.
pub fn enumerate_candidates(
    road_mask: &Mask,
    window: (usize, usize),
    stride: usize,
    min_inside: f64,
) -> Result<Vec<CandidateWindow>> {
    let (h, w) = (road_mask.height(), road_mask.width());
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || wh > h || ww > w || stride == 0 {
        return Err(Error::Config(format!(
            "window {wh}x{ww} with stride {stride} does not fit a {h}x{w} image"
        )));
    }
    if !(0.0..=1.0).contains(&min_inside) {
        return Err(Error::Config(format!("min_inside {min_inside} outside [0, 1]")));
    }
    // Counts are small integers, so the table is exact.
    let table = Integral::new(h, w, |r, c| f64::from(u8::from(road_mask.get(r, c))));
    let area = (wh * ww) as f64;
    let mut out = Vec::new();
    for row in (0..=h - wh).step_by(stride) {
        for col in (0..=w - ww).step_by(stride) {
            let inside = table.window(row, col, wh, ww) / area;
            if inside >= min_inside && inside > 0.0 {
                out.push(CandidateWindow {
                    row,
                    col,
                    height: wh,
                    width: ww,
                    score: None,
                    inside_fraction: inside,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    Ok(out)
}

/// Scores every candidate by its heatmap mass.
pub fn score_candidates(candidates: &[CandidateWindow], map: &HeatMap) -> Result<Vec<CandidateWindow>> {
    let table = Integral::new(map.height, map.width, |r, c| map.get(r, c));
    candidates
        .iter()
        .map(|c| {
            if c.row + c.height > map.height || c.col + c.width > map.width {
                return Err(Error::Range(format!(
                    "window at ({}, {}) leaves the {}x{} map",
                    c.row, c.col, map.height, map.width
                )));
            }
            Ok(CandidateWindow {
                score: Some(table.window(c.row, c.col, c.height, c.width)),
                ..*c
            })
        })
        .collect()
}

/// The highest-scoring candidate; ties go to the smallest (row, col).
pub fn score_and_select(candidates: &[CandidateWindow], map: &HeatMap) -> Result<CandidateWindow> {
    let scored = score_candidates(candidates, map)?;
    let mut best: Option<CandidateWindow> = None;
    for c in scored {
        let better = match &best {
            None => true,
            Some(b) => {
                let (s, bs) = (c.score.unwrap(), b.score.unwrap());
                s > bs || (s == bs && (c.row, c.col) < (b.row, b.col))
            }
        };
        if better {
            best = Some(c);
        }
    }
    best.ok_or(Error::EmptyCandidates)
}

/// Uniform choice among the candidates, used by the random-placement baseline.
pub fn select_random(candidates: &[CandidateWindow], rng: &mut Rng) -> Result<CandidateWindow> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

pub fn write_candidates_csv(candidates: &[CandidateWindow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(f, "row,col,height,width,score,inside_fraction")?;
        for c in candidates {
            let score = c.score.map(|s| s.to_string()).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{},{}",
                c.row, c.col, c.height, c.width, score, c.inside_fraction
            )?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
