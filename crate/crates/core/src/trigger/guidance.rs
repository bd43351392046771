//! Consistency guidance: gradient steps that keep lane pixels close to the
//! clean image and the environment structurally similar to it.

use serde::{Deserialize, Serialize};

use super::ssim::masked_ssim;
use crate::error::{Error, Result};
use crate::tensor::{Image, Latent, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceWeights {
    pub lambda_lane: f64,
    pub lambda_env: f64,
}

impl GuidanceWeights {
    pub fn is_off(&self) -> bool {
        self.lambda_lane == 0.0 && self.lambda_env == 0.0
    }
}

/// Mean squared difference over lane pixels and all channels; 0 for an empty mask.
pub fn lane_consistency_loss(gen: &Image, clean: &Image, lane_mask: &Mask) -> Result<f64> {
    check(gen.shape(), clean, lane_mask)?;
    Ok(lane_loss(gen.as_slice(), clean, lane_mask, None))
}

fn check(shape: (usize, usize, usize), clean: &Image, mask: &Mask) -> Result<()> {
    if shape != clean.shape() || (mask.height(), mask.width()) != (shape.0, shape.1) {
        return Err(Error::Shape("guidance inputs differ in shape".into()));
    }
    Ok(())
}

fn lane_loss(x: &[f64], clean: &Image, mask: &Mask, grad: Option<(&mut [f64], f64)>) -> f64 {
    let c = clean.channels();
    let n = mask.count() * c;
    if n == 0 {
        return 0.0;
    }
    let y = clean.as_slice();
    let mut total = 0.0;
    let mut grad = grad;
    for (p, on) in mask.as_slice().iter().enumerate() {
        if !*on {
            continue;
        }
        for i in p * c..(p + 1) * c {
            let d = x[i] - y[i];
            total += d * d;
            if let Some((g, scale)) = grad.as_mut() {
                g[i] += *scale * 2.0 * d / n as f64;
            }
        }
    }
    total / n as f64
}

/// `lambda_lane * L_lane + lambda_env * (1 - SSIM_env)` evaluated on the
/// decoded latent, and its gradient with respect to the latent. The decoder
/// clamps to [0, 1]; its derivative is taken as 1 inside and 0 outside.
pub fn guidance_objective(
    z: &Latent,
    clean: &Image,
    lane_mask: &Mask,
    env_mask: &Mask,
    weights: &GuidanceWeights,
) -> Result<(f64, Vec<f64>)> {
    check(z.shape(), clean, lane_mask)?;
    check(z.shape(), clean, env_mask)?;
    let x: Vec<f64> = z.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut grad = vec![0.0; x.len()];
    let mut value = 0.0;
    if weights.lambda_lane != 0.0 {
        value += weights.lambda_lane
            * lane_loss(&x, clean, lane_mask, Some((&mut grad, weights.lambda_lane)));
    }
    if weights.lambda_env != 0.0 {
        let (s, g) = masked_ssim(&x, clean.as_slice(), z.shape(), env_mask, true)?;
        value += weights.lambda_env * (1.0 - s);
        for (dst, gi) in grad.iter_mut().zip(g.unwrap()) {
            *dst -= weights.lambda_env * gi;
        }
    }
    for (g, v) in grad.iter_mut().zip(&z.data) {
        if !(0.0..=1.0).contains(v) {
            *g = 0.0;
        }
    }
    Ok((value, grad))
}

/// One gradient-descent step on the guidance objective.
pub fn guidance_step(
    z: &Latent,
    clean: &Image,
    lane_mask: &Mask,
    env_mask: &Mask,
    weights: &GuidanceWeights,
    step_size: f64,
) -> Result<Latent> {
    if step_size == 0.0 || weights.is_off() {
        return Ok(z.clone());
    }
    let (_, grad) = guidance_objective(z, clean, lane_mask, env_mask, weights)?;
    let mut out = z.clone();
    for (v, g) in out.data.iter_mut().zip(grad) {
        *v -= step_size * g;
    }
    Ok(out)
}
