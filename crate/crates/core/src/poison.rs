//! Dataset poisoning: pick a seeded subset, place a trigger on each sample,
//! synthesize it and rewrite the label with the attack strategy.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackKind, AttackStrategy};
use crate::detector::DetectorState;
use crate::error::{Error, Result};
use crate::heatmap::{compute_heatmap, HeatmapConfig};
use crate::placement::{enumerate_candidates, score_and_select, select_random, PlacementConfig};
use crate::rng::{derive_indexed, rng_for, rng_indexed};
use crate::scene::{LaneLabel, Scene};
use crate::tensor::Image;
use crate::trigger::{apply_baseline_trigger, masked_diffusion_edit, Denoiser, DiffusionSchedule, TriggerKind, TriggerSpec};

pub const POISON_MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum PlacementMode {
    /// Highest surrogate-heatmap window on the road.
    Heatmap,
    /// Uniform choice among the road windows.
    Random,
    /// The same origin for every sample.
    Fixed { row: usize, col: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonConfig {
    #[serde(default = "default_rate")]
    pub rate: f64,
    pub strategy: AttackStrategy,
    #[serde(default = "default_trigger")]
    pub trigger: TriggerKind,
    #[serde(default = "default_placement")]
    pub placement: PlacementMode,
    #[serde(default)]
    pub window: PlacementConfig,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
    #[serde(default)]
    pub schedule: DiffusionSchedule,
    /// Surrogate detector checkpoint; needed for heatmap placement.
    #[serde(default)]
    pub surrogate: Option<std::path::PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_rate() -> f64 {
    0.10
}
fn default_trigger() -> TriggerKind {
    TriggerKind::Mud
}
fn default_placement() -> PlacementMode {
    PlacementMode::Heatmap
}

impl PoisonConfig {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        Self {
            rate: default_rate(),
            strategy: AttackStrategy::new(kind),
            trigger: default_trigger(),
            placement: default_placement(),
            window: PlacementConfig::default(),
            heatmap: HeatmapConfig::default(),
            schedule: DiffusionSchedule::default(),
            surrogate: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::Config(format!("poisoning rate {} outside (0, 1]", self.rate)));
        }
        self.schedule.validate()?;
        Ok(())
    }

    /// `ceil(rate * n)`, robust to the rate not being exact in binary.
    pub fn poison_count(&self, n: usize) -> usize {
        ((self.rate * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
    }
}

/// What was done to one poisoned sample; enough to redo it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonRecord {
    pub source: usize,
    pub trigger: TriggerSpec,
    pub strategy: AttackStrategy,
    pub heatmap_score: Option<f64>,
    pub sample_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonManifest {
    pub version: u32,
    pub seed: u64,
    pub dataset_size: usize,
    pub config: PoisonConfig,
    pub records: Vec<PoisonRecord>,
    /// Selected samples that could not be poisoned and were replaced.
    pub skipped: Vec<usize>,
}

/// Everything trigger synthesis needs besides the sample.
pub struct PoisonContext<'a> {
    pub surrogate: Option<&'a DetectorState>,
    pub denoiser: Option<&'a dyn Denoiser>,
}

fn choose_window(
    scene: &Scene,
    cfg: &PoisonConfig,
    ctx: &PoisonContext,
    sample_seed: u64,
    min_inside: f64,
) -> Result<(usize, usize, Option<f64>)> {
    let (wh, ww) = cfg.window.window;
    match cfg.placement {
        PlacementMode::Fixed { row, col } => Ok((row, col, None)),
        PlacementMode::Random => {
            let cands = enumerate_candidates(&scene.road_mask, (wh, ww), cfg.window.stride, min_inside)?;
            let c = select_random(&cands, &mut rng_for(sample_seed, "placement"))?;
            Ok((c.row, c.col, None))
        }
        PlacementMode::Heatmap => {
            let surrogate = ctx
                .surrogate
                .ok_or_else(|| Error::Config("heatmap placement needs a surrogate model".into()))?;
            let cands = enumerate_candidates(&scene.road_mask, (wh, ww), cfg.window.stride, min_inside)?;
            let map = compute_heatmap(surrogate, &scene.image, &scene.label, cfg.strategy.kind, &cfg.heatmap)?;
            let c = score_and_select(&cands, &map)?;
            Ok((c.row, c.col, c.score))
        }
    }
}

/// Paints the trigger described by `spec` into `scene`'s image. Output is
/// quantized to 8 bits so it survives a PNG round trip unchanged.
pub fn synthesize_trigger(
    scene: &Scene,
    spec: &TriggerSpec,
    schedule: &DiffusionSchedule,
    denoiser: Option<&dyn Denoiser>,
    sample_seed: u64,
) -> Result<Image> {
    let (h, w, _) = scene.image.shape();
    spec.check_bounds(h, w)?;
    let mut out = match spec.kind.texture() {
        Some(texture) => {
            let den = denoiser
                .ok_or_else(|| Error::Config(format!("{} triggers need a denoiser", spec.kind.name())))?;
            masked_diffusion_edit(
                &scene.image,
                &spec.mask(h, w),
                texture,
                schedule,
                den,
                &scene.lane_mask,
                &scene.env_mask,
                sample_seed,
            )?
        }
        None => apply_baseline_trigger(&scene.image, spec)?,
    };
    out.quantize8();
    Ok(out)
}

fn poison_one(
    scene: &Scene,
    source: usize,
    cfg: &PoisonConfig,
    ctx: &PoisonContext,
    min_inside: f64,
) -> Result<(Scene, PoisonRecord)> {
    let sample_seed = derive_indexed(cfg.seed, "poison-sample", source as u64);
    let (row, col, score) = choose_window(scene, cfg, ctx, sample_seed, min_inside)?;
    let (wh, ww) = cfg.window.window;
    let mut spec = TriggerSpec::new(row, col, wh, ww, cfg.trigger);
    let image = synthesize_trigger(scene, &spec, &cfg.schedule, ctx.denoiser, sample_seed)?;
    spec.color_mean = Some(spec.measure_color(&image));
    let label = cfg.strategy.apply(&scene.label)?;
    let record = PoisonRecord {
        source,
        trigger: spec,
        strategy: cfg.strategy.clone(),
        heatmap_score: score,
        sample_seed,
    };
    Ok((
        Scene {
            image,
            label,
            ..scene.clone()
        },
        record,
    ))
}

fn skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::EmptyCandidates | Error::RotationDegenerate(_) | Error::InsufficientPoints(_)
    )
}

/// Poisons `ceil(rate * n)` seeded-random samples. A sample that cannot be
/// poisoned is logged and replaced by the next one in the seeded order.
/// Unselected samples are copied unchanged.
pub fn poison_dataset(scenes: &[Scene], cfg: &PoisonConfig, ctx: &PoisonContext) -> Result<(Vec<Scene>, PoisonManifest)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Config("cannot poison an empty dataset".into()));
    }
    if let Some(first) = scenes.first() {
        cfg.strategy.validate(first.label.num_anchors())?;
    }
    let want = cfg.poison_count(scenes.len());
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut rng_for(cfg.seed, "poison-select"));

    let attempt = |&i: &usize| (i, poison_one(&scenes[i], i, cfg, ctx, cfg.window.min_inside));
    let mut results: Vec<(usize, Result<(Scene, PoisonRecord)>)> = order[..want].par_iter().map(attempt).collect();
    let mut next = want;
    let mut done = Vec::with_capacity(want);
    let mut skipped = Vec::new();
    while let Some((i, r)) = results.pop() {
        match r {
            Ok(v) => done.push(v),
            Err(e) if skippable(&e) => {
                log::warn!("skipping sample {i}: {e}");
                skipped.push(i);
                if next < order.len() {
                    let j = order[next];
                    next += 1;
                    results.push(attempt(&j));
                }
            }
            Err(e) => return Err(e),
        }
    }
    if done.len() < want {
        log::warn!("only {} of {want} samples could be poisoned", done.len());
    }
    done.sort_by_key(|(_, rec)| rec.source);
    skipped.sort_unstable();

    let mut out: Vec<Scene> = scenes.to_vec();
    let mut records = Vec::with_capacity(done.len());
    for (scene, rec) in done {
        out[rec.source] = scene;
        records.push(rec);
    }
    let manifest = PoisonManifest {
        version: POISON_MANIFEST_VERSION,
        seed: cfg.seed,
        dataset_size: scenes.len(),
        config: cfg.clone(),
        records,
        skipped,
    };
    Ok((out, manifest))
}

/// Rebuilds the poisoned dataset from the clean sources and a manifest,
/// without the surrogate model.
pub fn replay_poison(scenes: &[Scene], manifest: &PoisonManifest, denoiser: Option<&dyn Denoiser>) -> Result<Vec<Scene>> {
    if manifest.version != POISON_MANIFEST_VERSION {
        return Err(Error::Config(format!("unsupported poison manifest version {}", manifest.version)));
    }
    if manifest.dataset_size != scenes.len() {
        return Err(Error::Shape(format!(
            "manifest covers {} samples, dataset has {}",
            manifest.dataset_size,
            scenes.len()
        )));
    }
    let redone: Vec<Result<(usize, Scene)>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            let src = scenes
                .get(rec.source)
                .ok_or_else(|| Error::Range(format!("record source {} out of range", rec.source)))?;
            let image = synthesize_trigger(src, &rec.trigger, &manifest.config.schedule, denoiser, rec.sample_seed)?;
            let label = rec.strategy.apply(&src.label)?;
            Ok((
                rec.source,
                Scene {
                    image,
                    label,
                    ..src.clone()
                },
            ))
        })
        .collect();
    let mut out = scenes.to_vec();
    for r in redone {
        let (i, s) = r?;
        out[i] = s;
    }
    Ok(out)
}

/// A test set with a trigger on every image.
#[derive(Clone, Debug)]
pub struct TriggeredSet {
    pub images: Vec<Image>,
    pub originals: Vec<LaneLabel>,
    pub attacked: Vec<LaneLabel>,
    pub triggers: Vec<TriggerSpec>,
    pub kind: AttackKind,
}

/// Triggers every test scene with the poisoning placement and synthesis
/// settings. When no window is fully on the road the coverage requirement
/// is relaxed (to half, then to any overlap) instead of dropping the scene.
pub fn build_triggered_testset(scenes: &[Scene], cfg: &PoisonConfig, ctx: &PoisonContext) -> Result<TriggeredSet> {
    cfg.validate()?;
    let per_scene: Vec<Result<(Image, LaneLabel, LaneLabel, TriggerSpec)>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let seed = derive_indexed(cfg.seed, "trigger-test", i as u64);
            let test_cfg = PoisonConfig { seed, ..cfg.clone() };
            let mut last = Error::EmptyCandidates;
            for min_inside in [cfg.window.min_inside, 0.5, 0.0] {
                match poison_one(scene, i, &test_cfg, ctx, min_inside) {
                    Ok((s, rec)) => return Ok((s.image, scene.label.clone(), s.label, rec.trigger)),
                    Err(Error::EmptyCandidates) => {
                        log::warn!("test scene {i}: relaxing road coverage below {min_inside}");
                        last = Error::EmptyCandidates;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last)
        })
        .collect();
    let mut set = TriggeredSet {
        images: Vec::with_capacity(scenes.len()),
        originals: Vec::with_capacity(scenes.len()),
        attacked: Vec::with_capacity(scenes.len()),
        triggers: Vec::with_capacity(scenes.len()),
        kind: cfg.strategy.kind,
    };
    for r in per_scene {
        let (img, orig, att, spec) = r?;
        set.images.push(img);
        set.originals.push(orig);
        set.attacked.push(att);
        set.triggers.push(spec);
    }
    Ok(set)
}

/// Seeded subset of indices, e.g. for a fine-tuning split.
pub fn seeded_subset(n: usize, k: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_indexed(seed, label, 0));
    idx.truncate(k.min(n));
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenes, GeneratorConfig};

    #[test]
    fn ceiling_rule() {
        let mut cfg = PoisonConfig::new(AttackKind::Lda, 0);
        cfg.rate = 0.01;
        assert_eq!(cfg.poison_count(10), 1);
        cfg.rate = 0.1;
        assert_eq!(cfg.poison_count(2000), 200);
        assert_eq!(cfg.poison_count(1), 1);
        cfg.rate = 0.03;
        assert_eq!(cfg.poison_count(800), 24);
        cfg.rate = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fixed_square_lda_poisoning() {
        let scenes = generate_scenes(2, 10, &GeneratorConfig::default()).unwrap();
        let mut cfg = PoisonConfig::new(AttackKind::Lda, 4);
        cfg.rate = 0.3;
        cfg.trigger = TriggerKind::Square;
        cfg.placement = PlacementMode::Fixed { row: 70, col: 20 };
        let ctx = PoisonContext {
            surrogate: None,
            denoiser: None,
        };
        let (out, manifest) = poison_dataset(&scenes, &cfg, &ctx).unwrap();
        assert_eq!(manifest.records.len(), 3);
        for rec in &manifest.records {
            let p = &out[rec.source];
            assert!(p.label.exist.iter().all(|e| !e));
            let spec = &rec.trigger;
            for r in 0..96 {
                for c in 0..160 {
                    let inside = (70..86).contains(&r) && (20..36).contains(&c);
                    if !inside {
                        assert_eq!(p.image.get(r, c, 1), scenes[rec.source].image.get(r, c, 1));
                    }
                }
            }
            assert_eq!((spec.row, spec.col), (70, 20));
        }
        let chosen: Vec<usize> = manifest.records.iter().map(|r| r.source).collect();
        for (i, s) in out.iter().enumerate() {
            if !chosen.contains(&i) {
                assert_eq!(s, &scenes[i]);
            }
        }
        assert_eq!(replay_poison(&scenes, &manifest, None).unwrap(), out);
    }

    #[test]
    fn heatmap_mode_needs_surrogate() {
        let scenes = generate_scenes(2, 3, &GeneratorConfig::default()).unwrap();
        let mut cfg = PoisonConfig::new(AttackKind::Loa, 4);
        cfg.trigger = TriggerKind::Square;
        let ctx = PoisonContext {
            surrogate: None,
            denoiser: None,
        };
        assert!(matches!(poison_dataset(&scenes, &cfg, &ctx), Err(Error::Config(_))));
    }
}
