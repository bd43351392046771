//! Gradient attention maps: per-pixel sum over channels of the absolute
//! input gradient of the task loss that an attack targets.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::attack::AttackKind;
use crate::detector::{DetectorState, LossSelector, LossWeights};
use crate::error::{Error, Result};
use crate::scene::LaneLabel;
use crate::tensor::{Image, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub selector: LossSelector,
    pub normalized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapConfig {
    pub loss: LossWeights,
    /// Multiplies the loss before differentiation.
    pub loss_scale: f64,
    /// Gaussian blur applied to the map, in pixels. `None` keeps the raw map.
    pub blur_sigma: Option<f64>,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            loss: LossWeights::default(),
            loss_scale: 1.0,
            blur_sigma: None,
        }
    }
}

/// LDA suppresses existence, so it uses the classification loss; the
/// coordinate attacks use the regression loss.
pub fn selector_for(kind: AttackKind) -> LossSelector {
    match kind {
        AttackKind::Lda => LossSelector::Cls,
        AttackKind::Loa | AttackKind::Lra => LossSelector::Reg,
    }
}

/// Attention map of `image` at its clean label.
pub fn compute_heatmap(
    state: &DetectorState,
    image: &Image,
    label: &LaneLabel,
    kind: AttackKind,
    cfg: &HeatmapConfig,
) -> Result<HeatMap> {
    if !(cfg.loss_scale > 0.0) {
        return Err(Error::Config(format!("loss_scale must be positive, got {}", cfg.loss_scale)));
    }
    let selector = selector_for(kind);
    let grad = state.input_gradient(image, label, &cfg.loss, selector)?;
    let (h, w, c) = grad.shape();
    let values = (0..h * w)
        .map(|p| {
            grad.data[p * c..(p + 1) * c]
                .iter()
                .map(|g| (cfg.loss_scale * g).abs())
                .sum()
        })
        .collect();
    let map = HeatMap {
        height: h,
        width: w,
        values,
        selector,
        normalized: false,
    };
    Ok(match cfg.blur_sigma {
        Some(s) => map.blur(s),
        None => map,
    })
}

impl HeatMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Index of the largest value; the first one wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Divides by the total mass, so values sum to one.
    pub fn normalize(&self) -> Result<HeatMap> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::UndefinedFraction("heatmap has no mass".into()));
        }
        Ok(HeatMap {
            values: self.values.iter().map(|v| v / total).collect(),
            normalized: true,
            ..self.clone()
        })
    }

    /// Separable Gaussian blur with edge clamping; kernel radius 3 sigma.
    pub fn blur(&self, sigma: f64) -> HeatMap {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        let (h, w) = (self.height as isize, self.width as isize);
        let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for (k, d) in kernel.iter().zip(-radius..=radius) {
                        let (rr, cc) = if horizontal {
                            (r, (c + d).clamp(0, w - 1))
                        } else {
                            ((r + d).clamp(0, h - 1), c)
                        };
                        acc += k * src[(rr * w + cc) as usize];
                    }
                    out[(r * w + c) as usize] = acc;
                }
            }
            out
        };
        let values = pass(&pass(&self.values, true), false);
        HeatMap {
            values,
            ..self.clone()
        }
    }

    /// Writes a 16-bit grayscale PNG scaled to the map's range plus a JSON
    /// sidecar with the range, from which values are recovered to within
    /// `(max - min) / 131070`.
    pub fn export(&self, png: &Path) -> Result<()> {
        let (lo, hi) = self.range();
        let span = hi - lo;
        let raw: Vec<u16> = self
            .values
            .iter()
            .map(|v| if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 })
            .collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                .ok_or_else(|| Error::Shape("heatmap buffer size mismatch".into()))?;
        buf.save(png)?;
        let side = HeatmapSidecar {
            min: lo,
            max: hi,
            height: self.height,
            width: self.width,
            selector: self.selector,
            normalized: self.normalized,
        };
        let path = png.with_extension("json");
        fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&path, e))
    }

    pub fn import(png: &Path) -> Result<HeatMap> {
        let path = png.with_extension("json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: HeatmapSidecar = serde_json::from_str(&text)?;
        let img = image::open(png)?.to_luma16();
        if (img.height() as usize, img.width() as usize) != (side.height, side.width) {
            return Err(Error::Shape("heatmap PNG does not match its sidecar".into()));
        }
        let span = side.max - side.min;
        Ok(HeatMap {
            height: side.height,
            width: side.width,
            values: img
                .as_raw()
                .iter()
                .map(|q| side.min + span * *q as f64 / 65535.0)
                .collect(),
            selector: side.selector,
            normalized: side.normalized,
        })
    }

    fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }

    /// The image blended half-and-half with the map rendered in red.
    pub fn overlay(&self, image: &Image, path: &Path) -> Result<()> {
        let (h, w, c) = image.shape();
        if (h, w) != (self.height, self.width) || c != 3 {
            return Err(Error::Shape("overlay needs an RGB image of the map's size".into()));
        }
        let (_, hi) = self.range();
        let base = image.to_u8();
        let mut out = RgbImage::new(w as u32, h as u32);
        for (p, px) in out.pixels_mut().enumerate() {
            let t = if hi > 0.0 { self.values[p] / hi } else { 0.0 };
            let heat = [255.0 * t, 64.0 * t, 0.0];
            for ch in 0..3 {
                px[ch] = (0.5 * base[p * 3 + ch] as f64 + 0.5 * heat[ch]).round() as u8;
            }
        }
        out.save(path)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct HeatmapSidecar {
    min: f64,
    max: f64,
    height: usize,
    width: usize,
    selector: LossSelector,
    normalized: bool,
}

/// Shannon entropy in nats of the map normalized to a distribution.
pub fn attention_entropy(map: &HeatMap) -> Result<f64> {
    let total = map.total();
    if !(total > 0.0) {
        return Err(Error::UndefinedEntropy);
    }
    Ok(-map
        .values
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let p = v / total;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Share of the map's mass that falls inside `region`.
pub fn attention_on_region(map: &HeatMap, region: &Mask) -> Result<f64> {
    if (region.height(), region.width()) != (map.height, map.width) {
        return Err(Error::Shape("region and heatmap differ in size".into()));
    }
    if region.is_empty() {
        return Err(Error::UndefinedFraction("region is empty".into()));
    }
    let total = map.total();
    if !(total > 0.0) {
        return Err(Error::UndefinedFraction("heatmap has no mass".into()));
    }
    let inside: f64 = map
        .values
        .iter()
        .zip(region.as_slice())
        .filter(|(_, m)| **m)
        .map(|(v, _)| v)
        .sum();
    Ok(inside / total)
}
