//! Masked diffusion editing in pixel space. Odd steps apply the denoiser to
//! the whole state; even steps keep only its masked part and restore the
//! starting state elsewhere, so the last (even) step leaves everything
//! outside the mask exactly as it started.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::guidance::{guidance_step, GuidanceWeights};
use super::TextureKind;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::{Image, Latent, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub lambda_lane: f64,
    pub lambda_env: f64,
    /// Guidance runs at steps `t` divisible by this; 0 disables it.
    pub guidance_interval: usize,
    /// Base step size; the applied step is this times the number of lane
    /// values, which turns the mean-normalized lane loss into a per-pixel
    /// pull of `2 * step * lambda_lane` towards the clean image.
    pub guidance_step: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self {
            steps: 10,
            sigma_min: 0.02,
            sigma_max: 0.9,
            lambda_lane: 1.0,
            lambda_env: 0.5,
            guidance_interval: 2,
            guidance_step: 0.1,
        }
    }
}

impl DiffusionSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2
            || !(self.sigma_min > 0.0)
            || !(self.sigma_max < 1.0)
            || !(self.sigma_min < self.sigma_max)
            || self.lambda_lane < 0.0
            || self.lambda_env < 0.0
            || !(self.guidance_step >= 0.0)
        {
            return Err(Error::Config(format!("invalid diffusion schedule {self:?}")));
        }
        Ok(())
    }

    /// Noise level of step `t` in `1..=steps`, linear and increasing; 0 at `t = 0`.
    pub fn sigma(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        let f = (t - 1) as f64 / (self.steps - 1) as f64;
        self.sigma_min + f * (self.sigma_max - self.sigma_min)
    }

    pub fn weights(&self) -> GuidanceWeights {
        GuidanceWeights {
            lambda_lane: self.lambda_lane,
            lambda_env: self.lambda_env,
        }
    }

    pub fn without_guidance(&self) -> Self {
        Self {
            guidance_interval: 0,
            ..self.clone()
        }
    }

    fn guides_at(&self, t: usize) -> bool {
        self.guidance_interval > 0 && t % self.guidance_interval == 0 && !self.weights().is_off()
    }
}

/// What the denoiser is conditioned on.
#[derive(Clone, Copy, Debug)]
pub struct Condition<'a> {
    pub mask: &'a Mask,
    pub texture: TextureKind,
}

/// One reverse step `z_t -> z_{t-1}`.
pub trait Denoiser: Sync {
    fn denoise(&self, z: &Latent, t: usize, sched: &DiffusionSchedule, cond: &Condition) -> Result<Latent>;
}

/// Returns a fixed target at every step.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    pub target: Latent,
}

impl Denoiser for OracleDenoiser {
    fn denoise(&self, z: &Latent, _t: usize, _s: &DiffusionSchedule, _c: &Condition) -> Result<Latent> {
        if z.shape() != self.target.shape() {
            return Err(Error::Shape("oracle target differs from the latent".into()));
        }
        Ok(self.target.clone())
    }
}

/// Edits the `region` mask of `clean`. See [`masked_diffusion_edit_observed`].
#[allow(clippy::too_many_arguments)]
pub fn masked_diffusion_edit(
    clean: &Image,
    region: &Mask,
    texture: TextureKind,
    sched: &DiffusionSchedule,
    den: &dyn Denoiser,
    lane_mask: &Mask,
    env_mask: &Mask,
    seed: u64,
) -> Result<Image> {
    masked_diffusion_edit_observed(clean, region, texture, sched, den, lane_mask, env_mask, seed, &mut |_, _| {})
}

/// The editing loop. `observe(t, z)` is called with the starting state
/// (`t = steps`) and after every step with the new state `z_{t-1}`.
#[allow(clippy::too_many_arguments)]
pub fn masked_diffusion_edit_observed(
    clean: &Image,
    region: &Mask,
    texture: TextureKind,
    sched: &DiffusionSchedule,
    den: &dyn Denoiser,
    lane_mask: &Mask,
    env_mask: &Mask,
    seed: u64,
    observe: &mut dyn FnMut(usize, &Latent),
) -> Result<Image> {
    sched.validate()?;
    let (h, w, c) = clean.shape();
    for m in [region, lane_mask, env_mask] {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::Shape("masks must match the image".into()));
        }
    }
    let mut rng = rng_for(seed, "diffusion-noise");
    let sigma_t = sched.sigma(sched.steps);
    let mut z_start = clean.to_latent();
    for (p, on) in region.as_slice().iter().enumerate() {
        for i in p * c..(p + 1) * c {
            let eps: f64 = StandardNormal.sample(&mut rng);
            if *on {
                z_start.data[i] += sigma_t * eps;
            }
        }
    }
    observe(sched.steps, &z_start);

    let cond = Condition { mask: region, texture };
    let weights = sched.weights();
    let step = sched.guidance_step * (lane_mask.count() * c).max(1) as f64;
    let mut z = z_start.clone();
    for t in (2..=sched.steps).rev() {
        let mut next = den.denoise(&z, t, sched, &cond)?;
        if next.shape() != z.shape() {
            return Err(Error::Shape("denoiser changed the latent shape".into()));
        }
        if sched.guides_at(t) {
            next = guidance_step(&next, clean, lane_mask, env_mask, &weights, step)?;
        }
        if t % 2 == 0 {
            for (p, on) in region.as_slice().iter().enumerate() {
                if !*on {
                    next.data[p * c..(p + 1) * c].copy_from_slice(&z_start.data[p * c..(p + 1) * c]);
                }
            }
        }
        if !next.is_finite() {
            return Err(Error::DiffusionDiverged(t));
        }
        z = next;
        observe(t - 1, &z);
    }
    Ok(z.decode())
}
