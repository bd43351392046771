//! Trigger synthesis: procedural textures, masked diffusion editing with
//! consistency guidance, and the BadNets / Blended baselines.

mod denoiser;
mod diffusion;
mod guidance;
mod ssim;

use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use denoiser::{masked_mean_color, train_toy_denoiser, DenoiserTrainConfig, ToyDenoiser};
pub use diffusion::{
    masked_diffusion_edit, masked_diffusion_edit_observed, Condition, Denoiser, DiffusionSchedule,
    OracleDenoiser,
};
pub use guidance::{guidance_objective, guidance_step, lane_consistency_loss, GuidanceWeights};
pub use ssim::{env_consistency_score, ssim, ssim_windows, window_ssim, SSIM_C1, SSIM_C2, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::{Image, Mask};

/// Texture classes the denoiser is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    Mud,
    Cone,
}

impl TextureKind {
    pub const ALL: [TextureKind; 2] = [TextureKind::Mud, TextureKind::Cone];

    pub fn index(self) -> usize {
        match self {
            TextureKind::Mud => 0,
            TextureKind::Cone => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Mud,
    Cone,
    /// White square filling the window.
    Square,
    /// Whole-image blend with a fixed pattern.
    Blended,
}

impl TriggerKind {
    pub fn name(self) -> &'static str {
        match self {
            TriggerKind::Mud => "mud",
            TriggerKind::Cone => "cone",
            TriggerKind::Square => "square",
            TriggerKind::Blended => "blended",
        }
    }

    pub fn texture(self) -> Option<TextureKind> {
        match self {
            TriggerKind::Mud => Some(TextureKind::Mud),
            TriggerKind::Cone => Some(TextureKind::Cone),
            _ => None,
        }
    }
}

impl FromStr for TriggerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mud" => Ok(TriggerKind::Mud),
            "cone" => Ok(TriggerKind::Cone),
            "square" | "badnets" => Ok(TriggerKind::Square),
            "blended" => Ok(TriggerKind::Blended),
            other => Err(Error::Config(format!("unknown trigger kind '{other}'"))),
        }
    }
}

/// Rectangular trigger region and the pattern painted into it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub kind: TriggerKind,
    /// Mean RGB inside the region after synthesis.
    pub color_mean: Option<[f64; 3]>,
}

impl TriggerSpec {
    pub fn new(row: usize, col: usize, height: usize, width: usize, kind: TriggerKind) -> Self {
        Self {
            row,
            col,
            height,
            width,
            kind,
            color_mean: None,
        }
    }

    pub fn mask(&self, height: usize, width: usize) -> Mask {
        Mask::rect(height, width, self.row, self.col, self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || self.row + self.height > height
            || self.col + self.width > width
        {
            return Err(Error::Range(format!(
                "trigger {}x{} at ({}, {}) does not fit {height}x{width}",
                self.height, self.width, self.row, self.col
            )));
        }
        Ok(())
    }

    /// Mean colour of `image` inside the region.
    pub fn measure_color(&self, image: &Image) -> [f64; 3] {
        let mut sum = [0.0; 3];
        let c = image.channels().min(3);
        for r in self.row..self.row + self.height {
            for col in self.col..self.col + self.width {
                for (ch, s) in sum.iter_mut().enumerate().take(c) {
                    *s += image.get(r, col, ch);
                }
            }
        }
        let n = self.pixel_count() as f64;
        sum.map(|s| s / n)
    }
}

/// RGB pattern with per-pixel opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Bilinearly upsampled random grid, values in [0, 1].
fn value_noise(h: usize, w: usize, grid: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let g = grid + 1;
    let knots: Vec<f64> = (0..g * g).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = r as f64 / (h.max(2) - 1) as f64 * grid as f64;
        let y0 = (y as usize).min(grid - 1);
        let fy = y - y0 as f64;
        for c in 0..w {
            let x = c as f64 / (w.max(2) - 1) as f64 * grid as f64;
            let x0 = (x as usize).min(grid - 1);
            let fx = x - x0 as f64;
            let k = |yy: usize, xx: usize| knots[yy * g + xx];
            let top = k(y0, x0) * (1.0 - fx) + k(y0, x0 + 1) * fx;
            let bot = k(y0 + 1, x0) * (1.0 - fx) + k(y0 + 1, x0 + 1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Procedural exemplar: mud is thresholded low-frequency noise in brown
/// hues, a cone is an orange and white striped triangle.
pub fn render_texture(kind: TextureKind, height: usize, width: usize, seed: u64) -> Texture {
    let n = height * width;
    match kind {
        TextureKind::Mud => {
            let mut rng = rng_for(seed, "mud-texture");
            let shape = value_noise(height, width, 3, &mut rng);
            let grain = value_noise(height, width, 6, &mut rng);
            let (cr, cc) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
            let mut rgb = Vec::with_capacity(n);
            let mut alpha = Vec::with_capacity(n);
            for r in 0..height {
                for c in 0..width {
                    let i = r * width + c;
                    // A centred bias keeps a solid core while the noise frays the rim.
                    let dr = (r as f64 - cr) / (cr + 1.0);
                    let dc = (c as f64 - cc) / (cc + 1.0);
                    let radial = 1.0 - (dr * dr + dc * dc).sqrt();
                    let v = 0.6 * radial + 0.5 * shape[i];
                    alpha.push(smoothstep((v - 0.25) / 0.15));
                    let shade = 0.85 + 0.3 * grain[i];
                    rgb.push([0.40 * shade, 0.27 * shade, 0.13 * shade]);
                }
            }
            Texture {
                height,
                width,
                rgb,
                alpha,
            }
        }
        TextureKind::Cone => {
            let mut rgb = Vec::with_capacity(n);
            let mut alpha = Vec::with_capacity(n);
            let cc = (width as f64 - 1.0) / 2.0;
            let bands = 4.0;
            for r in 0..height {
                let t = (r as f64 + 0.5) / height as f64;
                let half = t * (width as f64 / 2.0);
                let stripe = ((t * bands) as usize) % 2 == 1;
                for c in 0..width {
                    let inside = (c as f64 - cc).abs() <= half;
                    alpha.push(if inside { 1.0 } else { 0.0 });
                    rgb.push(if stripe { [0.95, 0.95, 0.92] } else { [0.98, 0.42, 0.05] });
                }
            }
            Texture {
                height,
                width,
                rgb,
                alpha,
            }
        }
    }
}

/// Alpha-composites `texture` into `image` with its top-left at (row, col).
pub fn paste_texture(image: &Image, texture: &Texture, row: usize, col: usize) -> Result<Image> {
    let (h, w, c) = image.shape();
    if row + texture.height > h || col + texture.width > w || c != 3 {
        return Err(Error::Range("texture does not fit the image".into()));
    }
    let mut out = image.clone();
    for r in 0..texture.height {
        for cc in 0..texture.width {
            let t = r * texture.width + cc;
            let a = texture.alpha[t];
            for ch in 0..3 {
                let v = image.get(row + r, col + cc, ch);
                out.set(row + r, col + cc, ch, a * texture.rgb[t][ch] + (1.0 - a) * v);
            }
        }
    }
    Ok(out)
}

/// White `size x size` square in the bottom-right corner.
pub fn inject_badnets(clean: &Image, size: usize) -> Result<Image> {
    let (h, w, _) = clean.shape();
    if size > h || size > w {
        return Err(Error::Range(format!("square of {size} px does not fit {h}x{w}")));
    }
    fill_white(clean, h - size, w - size, size, size)
}

fn fill_white(clean: &Image, row: usize, col: usize, h: usize, w: usize) -> Result<Image> {
    let mut out = clean.clone();
    for r in row..row + h {
        for c in col..col + w {
            for ch in 0..clean.channels() {
                out.set(r, c, ch, 1.0);
            }
        }
    }
    Ok(out)
}

/// `(1 - ratio) * clean + ratio * overlay`, clamped.
pub fn inject_blended(clean: &Image, overlay: &Image, ratio: f64) -> Result<Image> {
    if clean.shape() != overlay.shape() {
        return Err(Error::Shape("overlay and image differ in shape".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Range(format!("blend ratio {ratio} outside [0, 1]")));
    }
    let (h, w, c) = clean.shape();
    let data = clean
        .as_slice()
        .iter()
        .zip(overlay.as_slice())
        .map(|(a, b)| (1.0 - ratio) * a + ratio * b)
        .collect();
    Ok(Image::from_clamped(h, w, c, data))
}

/// Fixed high-contrast pattern used by the Blended baseline.
pub fn blend_pattern(height: usize, width: usize, channels: usize) -> Image {
    let mut rng = rng_for(0, "blend-pattern");
    let noise = value_noise(height, width, 8, &mut rng);
    let mut data = Vec::with_capacity(height * width * channels);
    for (p, v) in noise.iter().enumerate() {
        let (r, c) = (p / width, p % width);
        let check = ((r / 8 + c / 8) % 2) as f64;
        for ch in 0..channels {
            data.push((0.5 * check + 0.5 * v * (ch as f64 + 1.0) / channels as f64).clamp(0.0, 1.0));
        }
    }
    Image::from_clamped(height, width, channels, data)
}

pub const BLEND_RATIO: f64 = 0.15;

/// Applies a non-diffusion trigger: the white square fills the region, the
/// blended pattern covers the whole image.
pub fn apply_baseline_trigger(clean: &Image, spec: &TriggerSpec) -> Result<Image> {
    let (h, w, c) = clean.shape();
    match spec.kind {
        TriggerKind::Square => {
            spec.check_bounds(h, w)?;
            fill_white(clean, spec.row, spec.col, spec.height, spec.width)
        }
        TriggerKind::Blended => inject_blended(clean, &blend_pattern(h, w, c), BLEND_RATIO),
        other => Err(Error::Config(format!(
            "{} triggers are synthesized by diffusion",
            other.name()
        ))),
    }
}
