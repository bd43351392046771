use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LaneLabel, Scene, MISSING};
use crate::error::{Error, Result};
use crate::rng::{rng_indexed, Rng};
use crate::tensor::{Image, Mask};

/// Number of lane slots; slot `i` is the `i`-th boundary from the left.
pub const LANE_SLOTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightingMode {
    Normal,
    Shadow,
    Highlight,
    Night,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub min_lanes: usize,
    pub max_lanes: usize,
    pub anchors: usize,
    /// Lighting is drawn uniformly from this list.
    pub lighting: Vec<LightingMode>,
    pub max_sprites: usize,
    pub road_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 160,
            min_lanes: 2,
            max_lanes: 4,
            anchors: 12,
            lighting: vec![
                LightingMode::Normal,
                LightingMode::Shadow,
                LightingMode::Highlight,
                LightingMode::Night,
            ],
            max_sprites: 2,
            road_noise: 0.02,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!(
                "scene must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.min_lanes > self.max_lanes || self.max_lanes > LANE_SLOTS {
            return Err(Error::Config(format!(
                "lane range [{}, {}] must lie within [0, {LANE_SLOTS}]",
                self.min_lanes, self.max_lanes
            )));
        }
        if self.anchors < 8 {
            return Err(Error::Config(format!(
                "need at least 8 row anchors, got {}",
                self.anchors
            )));
        }
        if self.lighting.is_empty() {
            return Err(Error::Config("lighting list is empty".into()));
        }
        if !(self.road_noise >= 0.0 && self.road_noise < 0.5) {
            return Err(Error::Config("road_noise must be in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Evenly spaced anchor rows over the lower 60% of the image, bottom first.
    pub fn row_anchors(&self) -> Vec<usize> {
        let bottom = self.height - 1;
        let span = (self.height as f64 * 0.6 - 1.0).floor() as usize;
        let step = (span / (self.anchors - 1)).max(1);
        (0..self.anchors).map(|j| bottom - j * step).collect()
    }

    fn horizon(&self) -> f64 {
        0.3 * self.height as f64
    }
}

/// Perspective road geometry for one scene.
struct RoadGeometry {
    horizon: f64,
    bottom: f64,
    center: f64,
    lane_width: f64,
    ego_shift: f64,
    curve: [f64; 3],
    width: f64,
}

impl RoadGeometry {
    /// Perspective scale: 1 at the bottom row, 0 at the horizon.
    fn depth(&self, row: f64) -> f64 {
        (row - self.horizon) / (self.bottom - self.horizon)
    }

    /// Column of a road-frame lateral offset (in bottom-row pixels) at `row`.
    fn column(&self, lateral: f64, row: f64) -> f64 {
        let d = self.depth(row);
        let v = 1.0 - d;
        let [a1, a2, a3] = self.curve;
        let bend = self.width * (a1 * v + a2 * v * v + a3 * v * v * v);
        self.center + d * (lateral + self.ego_shift) + bend
    }

    fn slot_offset(&self, slot: usize) -> f64 {
        (slot as f64 - 1.5) * self.lane_width
    }

    fn marking_half_width(&self, row: f64) -> f64 {
        0.5 + self.depth(row)
    }

    fn road_edges(&self, row: f64) -> (f64, f64) {
        (
            self.column(-2.0 * self.lane_width, row),
            self.column(2.0 * self.lane_width, row),
        )
    }
}

/// Length of `[x - 0.5, x + 0.5) ∩ [lo, hi]`.
fn coverage(x: f64, lo: f64, hi: f64) -> f64 {
    ((x + 0.5).min(hi) - (x - 0.5).max(lo)).max(0.0)
}

fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn choose_slots(rng: &mut Rng, k: usize) -> Vec<usize> {
    match k {
        0 => vec![],
        1 => vec![1 + rng.random_range(0..2)],
        2 => vec![1, 2],
        3 => {
            if rng.random_bool(0.5) {
                vec![0, 1, 2]
            } else {
                vec![1, 2, 3]
            }
        }
        _ => vec![0, 1, 2, 3],
    }
}

/// Renders one scene. Pure in `(seed, cfg)`.
pub fn generate_scene(seed: u64, cfg: &GeneratorConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = rng_indexed(seed, "scene", 0);
    let (h, w) = (cfg.height, cfg.width);
    let wf = w as f64;

    let geo = RoadGeometry {
        horizon: cfg.horizon(),
        bottom: (h - 1) as f64,
        center: (wf - 1.0) / 2.0,
        lane_width: 0.28 * wf,
        ego_shift: rng.random_range(-0.12..0.12) * 0.28 * wf,
        curve: [
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.15..0.15),
        ],
        width: wf,
    };

    let n_lanes = rng.random_range(cfg.min_lanes..=cfg.max_lanes);
    let slots = choose_slots(&mut rng, n_lanes);
    let lighting = cfg.lighting[rng.random_range(0..cfg.lighting.len())];
    let noise = Normal::new(0.0, cfg.road_noise.max(1e-12)).expect("valid std");

    let mut data = vec![0.0; h * w * 3];
    let mut road_mask = Mask::new(h, w);
    let mut lane_mask = Mask::new(h, w);
    let mut env_mask = Mask::new(h, w);

    let sky_top = [0.45 + rng.random_range(-0.05..0.05), 0.62, 0.88];
    let grass = [
        0.28 + rng.random_range(-0.05..0.05),
        0.45 + rng.random_range(-0.05..0.05),
        0.22,
    ];
    let asphalt = 0.40 + rng.random_range(-0.06..0.06);
    let paint = 0.92;

    // Background: sky above the horizon, verge below, asphalt on the road.
    for r in 0..h {
        let rf = r as f64;
        for c in 0..w {
            let cf = c as f64;
            let base = (r * w + c) * 3;
            if rf <= geo.horizon {
                let t = rf / geo.horizon;
                for ch in 0..3 {
                    data[base + ch] = sky_top[ch] * (1.0 - 0.3 * t) + 0.3 * t * 0.95;
                }
                continue;
            }
            let (left, right) = geo.road_edges(rf);
            if cf >= left && cf <= right {
                road_mask.set(r, c, true);
                let g = asphalt + noise.sample(&mut rng);
                data[base..base + 3].copy_from_slice(&[g, g, g * 1.02]);
            } else {
                let jitter = noise.sample(&mut rng);
                for ch in 0..3 {
                    data[base + ch] = grass[ch] + jitter;
                }
            }
        }
    }

    // Skyline silhouettes resting on the horizon.
    let horizon_row = geo.horizon.floor() as usize;
    let mut c = 0usize;
    while c < w {
        let bw = rng.random_range(6..18).min(w - c);
        if rng.random_bool(0.7) {
            let bh = rng.random_range(3..10).min(horizon_row);
            let shade = rng.random_range(0.35..0.6);
            for r in horizon_row + 1 - bh..=horizon_row {
                for cc in c..c + bw {
                    let base = (r * w + cc) * 3;
                    data[base..base + 3].copy_from_slice(&[shade, shade, shade + 0.05]);
                    env_mask.set(r, cc, true);
                }
            }
        }
        c += bw;
    }

    // Lane markings, anti-aliased by exact horizontal coverage per row.
    let row_anchors = cfg.row_anchors();
    let mut label = LaneLabel::empty(row_anchors.clone(), LANE_SLOTS, w);
    let first_row = (geo.horizon + 2.0).ceil() as usize;
    for &slot in &slots {
        let lateral = geo.slot_offset(slot);
        for r in first_row..h {
            let rf = r as f64;
            let center = geo.column(lateral, rf);
            let hw = geo.marking_half_width(rf);
            let lo = center - hw;
            let hi = center + hw;
            let c0 = (lo - 0.5).floor().max(0.0) as usize;
            let c1 = ((hi + 0.5).ceil() as isize).min(w as isize - 1);
            if c1 < 0 {
                continue;
            }
            for c in c0..=c1 as usize {
                let cov = coverage(c as f64, lo, hi);
                if cov <= 0.0 || !road_mask.get(r, c) {
                    continue;
                }
                let base = (r * w + c) * 3;
                for ch in 0..3 {
                    data[base + ch] = (1.0 - cov) * data[base + ch] + cov * paint;
                }
                lane_mask.set(r, c, true);
            }
        }
        label.exist[slot] = true;
        for (j, &ar) in row_anchors.iter().enumerate() {
            let rf = ar as f64;
            let center = geo.column(lateral, rf);
            let hw = geo.marking_half_width(rf);
            let (left, right) = geo.road_edges(rf);
            let visible = center - hw >= 0.0
                && center + hw <= wf - 1.0
                && center - hw > left + 0.5
                && center + hw < right - 0.5;
            label.lanes[slot][j] = if visible { center } else { MISSING };
        }
    }

    // Roadside sprites (vehicles, poles) placed strictly off the road.
    let n_sprites = rng.random_range(0..=cfg.max_sprites);
    for _ in 0..n_sprites {
        let r_bottom = rng.random_range(first_row + 4..h) as f64;
        let d = geo.depth(r_bottom);
        let sw = (6.0 + 14.0 * d).round() as usize;
        let sh = (4.0 + 10.0 * d).round() as usize;
        let (left, right) = geo.road_edges(r_bottom);
        let right_side = rng.random_bool(0.5);
        let gap = 1.0 + rng.random_range(0.0..6.0);
        let c0 = if right_side {
            (right + gap).ceil()
        } else {
            (left - gap).floor() - sw as f64
        };
        if c0 < 0.0 || c0 + sw as f64 > wf {
            continue;
        }
        let color = [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ];
        let r1 = r_bottom as usize;
        let r0 = (r1 + 1).saturating_sub(sh).max(horizon_row + 1);
        for r in r0..=r1 {
            for c in c0 as usize..c0 as usize + sw {
                if road_mask.get(r, c) {
                    continue;
                }
                let base = (r * w + c) * 3;
                let shade = if r == r1 { 0.5 } else { 1.0 };
                for ch in 0..3 {
                    data[base + ch] = color[ch] * shade;
                }
                env_mask.set(r, c, true);
            }
        }
    }

    // Global lighting.
    let (gain, gamma) = match lighting {
        LightingMode::Normal | LightingMode::Shadow => (1.0, 1.0),
        LightingMode::Highlight => (1.15, 0.8),
        LightingMode::Night => (0.45, 1.3),
    };
    let shadow = if lighting == LightingMode::Shadow {
        let top = geo.horizon + rng.random_range(5.0..20.0);
        let bottom = (h - 1) as f64 - rng.random_range(0.0..20.0);
        let x0 = rng.random_range(0.0..wf * 0.6);
        let x1 = x0 + rng.random_range(wf * 0.2..wf * 0.5);
        let slant = rng.random_range(-20.0..20.0);
        Some(vec![
            (x0 + slant, top),
            (x1 + slant, top),
            (x1, bottom),
            (x0, bottom),
        ])
    } else {
        None
    };
    for r in 0..h {
        for c in 0..w {
            let in_shadow = shadow
                .as_ref()
                .is_some_and(|p| point_in_polygon(c as f64, r as f64, p));
            let base = (r * w + c) * 3;
            for ch in 0..3 {
                let mut v = data[base + ch].clamp(0.0, 1.0);
                v = gain * v.powf(gamma);
                if in_shadow {
                    v -= 0.18;
                }
                data[base + ch] = v;
            }
        }
    }

    let mut image = Image::from_clamped(h, w, 3, data);
    image.quantize8();
    let env_mask = env_mask.and_not(&road_mask);

    let scene = Scene {
        image,
        label,
        road_mask,
        lane_mask,
        env_mask,
    };
    scene.validate()?;
    Ok(scene)
}

/// Generates `n` scenes with per-index seeds derived from `seed`.
pub fn generate_scenes(seed: u64, n: usize, cfg: &GeneratorConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    (0..n)
        .map(|i| generate_scene(crate::rng::derive_indexed(seed, "scenes", i as u64), cfg))
        .collect()
}
