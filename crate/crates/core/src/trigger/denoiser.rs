//! Small convolutional denoiser that paints a texture into a masked
//! window. It predicts the clean composite `x0` from `z_t` and takes the
//! deterministic step `z_{t-1} = x0 + (sigma_{t-1} / sigma_t) (z_t - x0)`.
//! Work is confined to the mask's bounding box plus a margin; elsewhere the
//! step is the identity.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::diffusion::{Condition, Denoiser, DiffusionSchedule};
use super::{paste_texture, render_texture, TextureKind};
use crate::checkpoint::{read_container, write_container};
use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_inplace, Conv2d, ConvGrad, FeatureMap};
use crate::placement::enumerate_candidates;
use crate::rng::{derive_indexed, rng_for, rng_indexed};
use crate::scene::Scene;
use crate::tensor::{Image, Latent, Mask};

pub const DENOISER_KIND: &str = "denoiser";
/// z (3), mask, relative row and column inside the mask box, texture one-hot (2), sigma.
const INPUT_CHANNELS: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDenoiser {
    pub convs: Vec<Conv2d>,
    pub margin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserTrainConfig {
    pub samples: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub window: usize,
    pub margin: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            samples: 256,
            epochs: 20,
            batch: 16,
            lr: 3e-3,
            window: 16,
            margin: 8,
            hidden: 16,
            seed: 0,
        }
    }
}

struct Crop {
    row: usize,
    col: usize,
    height: usize,
    width: usize,
}

fn mask_box(mask: &Mask) -> Option<(usize, usize, usize, usize)> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    (r0 != usize::MAX).then_some((r0, r1, c0, c1))
}

impl ToyDenoiser {
    pub fn init(seed: u64, hidden: usize, margin: usize) -> Self {
        let mut rng = rng_for(seed, "denoiser-init");
        let mut convs = vec![
            Conv2d::new(INPUT_CHANNELS, hidden, 1),
            Conv2d::new(hidden, hidden, 1),
            Conv2d::new(hidden, 3, 1),
        ];
        for c in &mut convs {
            c.init(&mut rng);
        }
        // Start close to the identity step.
        for v in convs[2].weight.iter_mut() {
            *v *= 0.1;
        }
        Self { convs, margin }
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum()
    }

    fn crop_for(&self, mask: &Mask) -> Option<Crop> {
        let (r0, r1, c0, c1) = mask_box(mask)?;
        let row = r0.saturating_sub(self.margin);
        let col = c0.saturating_sub(self.margin);
        let end_r = (r1 + 1 + self.margin).min(mask.height());
        let end_c = (c1 + 1 + self.margin).min(mask.width());
        Some(Crop {
            row,
            col,
            height: end_r - row,
            width: end_c - col,
        })
    }

    fn build_input(&self, z: &Latent, crop: &Crop, mask: &Mask, texture: TextureKind, sigma: f64) -> FeatureMap {
        let (r0, r1, c0, c1) = mask_box(mask).unwrap_or((0, 0, 0, 0));
        let span_r = (r1 - r0).max(1) as f64;
        let span_c = (c1 - c0).max(1) as f64;
        let (h, w) = (crop.height, crop.width);
        let mut fm = FeatureMap::zeros(INPUT_CHANNELS, h, w);
        let plane = h * w;
        for r in 0..h {
            for c in 0..w {
                let (ir, ic) = (crop.row + r, crop.col + c);
                let p = r * w + c;
                for ch in 0..3 {
                    fm.data[ch * plane + p] = z.data[z.index(ir, ic, ch)] - 0.5;
                }
                if mask.get(ir, ic) {
                    fm.data[3 * plane + p] = 1.0;
                    fm.data[4 * plane + p] = (ir - r0) as f64 / span_r;
                    fm.data[5 * plane + p] = (ic - c0) as f64 / span_c;
                }
                fm.data[(6 + texture.index()) * plane + p] = 1.0;
                fm.data[8 * plane + p] = sigma;
            }
        }
        fm
    }

    /// Forward through the network; returns the residual (CHW) and the
    /// cached activations for backprop.
    fn run(&self, input: &FeatureMap) -> (FeatureMap, Vec<Vec<f64>>, Vec<FeatureMap>) {
        let mut cols = Vec::new();
        let mut acts: Vec<FeatureMap> = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            let x = acts.last().unwrap_or(input);
            let (mut out, col) = conv.forward(x);
            if i + 1 < self.convs.len() {
                relu_inplace(&mut out.data);
            }
            cols.push(col);
            acts.push(out);
        }
        (acts.last().unwrap().clone(), cols, acts)
    }

    /// Predicted clean image `x0` for the whole latent.
    pub fn predict_x0(&self, z: &Latent, mask: &Mask, texture: TextureKind, sigma: f64) -> Result<Latent> {
        let (h, w, c) = z.shape();
        if c != 3 || (mask.height(), mask.width()) != (h, w) {
            return Err(Error::Shape("denoiser needs an RGB latent and a matching mask".into()));
        }
        let mut out = z.clone();
        let Some(crop) = self.crop_for(mask) else {
            return Ok(out);
        };
        let input = self.build_input(z, &crop, mask, texture, sigma);
        let (res, _, _) = self.run(&input);
        let plane = crop.height * crop.width;
        for r in 0..crop.height {
            for cc in 0..crop.width {
                for ch in 0..3 {
                    let i = out.index(crop.row + r, crop.col + cc, ch);
                    out.data[i] += res.data[ch * plane + r * crop.width + cc];
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "hidden": self.convs[0].out_ch,
            "margin": self.margin,
        });
        let params: Vec<f64> = self
            .convs
            .iter()
            .flat_map(|c| c.weight.iter().chain(&c.bias).copied())
            .collect();
        write_container(path, DENOISER_KIND, header, &params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = read_container(path, DENOISER_KIND)?;
        let hidden = header["hidden"].as_u64().ok_or_else(|| Error::Checkpoint("missing hidden".into()))? as usize;
        let margin = header["margin"].as_u64().ok_or_else(|| Error::Checkpoint("missing margin".into()))? as usize;
        let mut den = Self::init(0, hidden, margin);
        if params.len() != den.param_count() {
            return Err(Error::Checkpoint(format!(
                "denoiser expects {} parameters, file has {}",
                den.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for c in &mut den.convs {
            for s in [&mut c.weight, &mut c.bias] {
                let n = s.len();
                s.copy_from_slice(&params[offset..offset + n]);
                offset += n;
            }
        }
        Ok(den)
    }
}

impl Denoiser for ToyDenoiser {
    fn denoise(&self, z: &Latent, t: usize, sched: &DiffusionSchedule, cond: &Condition) -> Result<Latent> {
        let (s_t, s_prev) = (sched.sigma(t), sched.sigma(t - 1));
        let x0 = self.predict_x0(z, cond.mask, cond.texture, s_t)?;
        let ratio = s_prev / s_t;
        let mut out = x0;
        for (o, zi) in out.data.iter_mut().zip(&z.data) {
            *o += ratio * (zi - *o);
        }
        Ok(out)
    }
}

/// A training crop: clean composite target with its window.
struct Example {
    target: Latent,
    mask: Mask,
    texture: TextureKind,
}

fn make_examples(scenes: &[Scene], cfg: &DenoiserTrainConfig) -> Result<Vec<Example>> {
    let crop = cfg.window + 2 * cfg.margin;
    let mut out = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let scene = &scenes[i % scenes.len()];
        let (h, w, _) = scene.image.shape();
        if h < crop || w < crop {
            return Err(Error::Config(format!("scenes are smaller than the {crop} px crop")));
        }
        let mut rng = rng_indexed(cfg.seed, "denoiser-example", i as u64);
        let cands = enumerate_candidates(&scene.road_mask, (cfg.window, cfg.window), 4, 1.0)
            .or_else(|_| enumerate_candidates(&scene.road_mask, (cfg.window, cfg.window), 4, 0.0))
            .unwrap_or_default();
        let (wr, wc) = if cands.is_empty() {
            (rng.random_range(0..=h - cfg.window), rng.random_range(0..=w - cfg.window))
        } else {
            let c = cands[rng.random_range(0..cands.len())];
            (c.row, c.col)
        };
        let texture = TextureKind::ALL[i % 2];
        let tex = render_texture(texture, cfg.window, cfg.window, derive_indexed(cfg.seed, "denoiser-texture", i as u64));
        let composite = paste_texture(&scene.image, &tex, wr, wc)?;
        let off_r = rng.random_range(0..=2 * cfg.margin);
        let off_c = rng.random_range(0..=2 * cfg.margin);
        let cr = wr.saturating_sub(off_r).min(h - crop);
        let cc = wc.saturating_sub(off_c).min(w - crop);
        let mut target = Latent::zeros(crop, crop, 3);
        for r in 0..crop {
            for c in 0..crop {
                for ch in 0..3 {
                    let i = target.index(r, c, ch);
                    target.data[i] = composite.get(cr + r, cc + c, ch);
                }
            }
        }
        out.push(Example {
            target,
            mask: Mask::rect(crop, crop, wr - cr, wc - cc, cfg.window, cfg.window),
            texture,
        });
    }
    Ok(out)
}

/// Trains the denoiser to recover texture composites from noise added
/// inside the window, at noise levels drawn from the schedule. Returns the
/// model and the mean loss of every epoch.
pub fn train_toy_denoiser(
    scenes: &[Scene],
    sched: &DiffusionSchedule,
    cfg: &DenoiserTrainConfig,
) -> Result<(ToyDenoiser, Vec<f64>)> {
    sched.validate()?;
    if scenes.is_empty() || cfg.samples == 0 || cfg.batch == 0 {
        return Err(Error::Config("denoiser training needs scenes, samples and a batch size".into()));
    }
    let examples = make_examples(scenes, cfg)?;
    let mut den = ToyDenoiser::init(cfg.seed, cfg.hidden, cfg.margin);
    let sizes: Vec<usize> = den.convs.iter().flat_map(|c| [c.weight.len(), c.bias.len()]).collect();
    let mut m1: Vec<Vec<f64>> = sizes.iter().map(|n| vec![0.0; *n]).collect();
    let mut m2 = m1.clone();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut step = 0i32;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for (bi, batch) in examples.chunks(cfg.batch).enumerate() {
            let mut grads: Vec<ConvGrad> = den.convs.iter().map(Conv2d::zero_grad).collect();
            for (k, ex) in batch.iter().enumerate() {
                let idx = (epoch * examples.len() + bi * cfg.batch + k) as u64;
                let mut rng = rng_indexed(cfg.seed, "denoiser-noise", idx);
                let t = rng.random_range(1..=sched.steps);
                let sigma = sched.sigma(t);
                let mut z = ex.target.clone();
                for (p, on) in ex.mask.as_slice().iter().enumerate() {
                    for ch in 0..3 {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        if *on {
                            z.data[p * 3 + ch] += sigma * e;
                        }
                    }
                }
                let (h, w, _) = z.shape();
                let crop = Crop {
                    row: 0,
                    col: 0,
                    height: h,
                    width: w,
                };
                let input = den.build_input(&z, &crop, &ex.mask, ex.texture, sigma);
                let (res, cols, acts) = den.run(&input);
                let plane = h * w;
                let n = (plane * 3) as f64;
                let mut g = FeatureMap::zeros(3, h, w);
                for p in 0..plane {
                    for ch in 0..3 {
                        let pred = z.data[p * 3 + ch] + res.data[ch * plane + p];
                        let d = pred - ex.target.data[p * 3 + ch];
                        epoch_loss += d * d / n;
                        g.data[ch * plane + p] = 2.0 * d / n / batch.len() as f64;
                    }
                }
                let mut grad = g.data;
                for li in (0..den.convs.len()).rev() {
                    if li + 1 < den.convs.len() {
                        relu_backward(&acts[li].data, &mut grad);
                    }
                    let x = if li == 0 { &input } else { &acts[li - 1] };
                    match den.convs[li].backward(&grad, &cols[li], (x.height, x.width), Some(&mut grads[li]), li > 0) {
                        Some(gi) => grad = gi.data,
                        None => break,
                    }
                }
            }
            step += 1;
            let mut slot = 0;
            for (conv, g) in den.convs.iter_mut().zip(&grads) {
                for (param, grad) in [(&mut conv.weight, &g.weight), (&mut conv.bias, &g.bias)] {
                    for ((p, gv), (a, b)) in param
                        .iter_mut()
                        .zip(grad)
                        .zip(m1[slot].iter_mut().zip(m2[slot].iter_mut()))
                    {
                        *a = b1 * *a + (1.0 - b1) * gv;
                        *b = b2 * *b + (1.0 - b2) * gv * gv;
                        let ah = *a / (1.0 - b1.powi(step));
                        let bh = *b / (1.0 - b2.powi(step));
                        *p -= cfg.lr * ah / (bh.sqrt() + eps);
                    }
                    slot += 1;
                }
            }
        }
        let mean = epoch_loss / examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "denoiser loss is not finite".into(),
            });
        }
        log::debug!("denoiser epoch {epoch}: loss {mean:.5}");
        trace.push(mean);
    }
    Ok((den, trace))
}

/// Mean colour inside `mask` of an image.
pub fn masked_mean_color(image: &Image, mask: &Mask) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut n = 0.0f64;
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) {
                for (ch, s) in sum.iter_mut().enumerate() {
                    *s += image.get(r, c, ch);
                }
                n += 1.0;
            }
        }
    }
    sum.map(|s| s / n.max(1.0))
}
