use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lanetrap_core::detector::{init_detector, train as train_detector, DetectorState, TrainConfig};
use lanetrap_core::eval::{
    attack_success, config_hash, evaluate, finetune_defense, prune_defense, stealth_report, write_eval_csv, EvalRow,
};
use lanetrap_core::heatmap::{attention_entropy, attention_on_region, compute_heatmap};
use lanetrap_core::placement::{enumerate_candidates, score_and_select, score_candidates, write_candidates_csv};
use lanetrap_core::poison::{build_triggered_testset, poison_dataset, PlacementMode, PoisonContext, PoisonManifest, TriggeredSet};
use lanetrap_core::scene::{generate_scenes, read_dataset, write_dataset};
use lanetrap_core::trigger::{train_toy_denoiser, Denoiser, ToyDenoiser};
use lanetrap_core::{Error, Image, LaneLabel, Result, Scene};

use crate::config::{DefenseMethod, RunConfig};

pub const MODEL_FILE: &str = "model.ckpt";
pub const DENOISER_FILE: &str = "denoiser.ckpt";
pub const POISON_MANIFEST: &str = "poison_manifest.json";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_scenes(dir: &Path) -> Result<Vec<Scene>> {
    let (_, scenes) = read_dataset(dir)?;
    if scenes.is_empty() {
        return Err(Error::Config(format!("dataset {} is empty", dir.display())));
    }
    Ok(scenes)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Names for the evaluated models: the file stem, or the parent directory
/// when stems collide (every `train` run writes `model.ckpt`).
fn model_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths.iter().map(|p| stem(p)).collect();
    paths
        .iter()
        .zip(&stems)
        .map(|(p, s)| {
            if stems.iter().filter(|t| *t == s).count() == 1 {
                return s.clone();
            }
            match p.parent().and_then(|d| d.file_name()) {
                Some(d) => d.to_string_lossy().into_owned(),
                None => p.display().to_string(),
            }
        })
        .collect()
}

fn placement_name(mode: PlacementMode) -> String {
    match mode {
        PlacementMode::Heatmap => "heatmap".into(),
        PlacementMode::Random => "random".into(),
        PlacementMode::Fixed { row, col } => format!("fixed:{row}:{col}"),
    }
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let n = cfg
        .synth
        .n
        .ok_or_else(|| Error::Config("synth needs --n".into()))?;
    let scenes = generate_scenes(cfg.seed, n, &cfg.generator)?;
    let out = cfg.out_dir()?;
    write_dataset(&scenes, out, cfg.seed, &cfg.synth.split, serde_json::to_value(&cfg.generator)?)?;
    log::info!("wrote {n} scenes to {}", out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let scenes = load_scenes(cfg.data_dir()?)?;
    let initial = match cfg.inputs.models.first() {
        Some(path) => DetectorState::load(path)?,
        None => {
            let label = &scenes[0].label;
            init_detector(cfg.seed, label.num_lanes(), label.num_anchors(), scenes[0].image.shape())?
        }
    };
    let samples: Vec<(&Image, &LaneLabel)> = scenes.iter().map(|s| (&s.image, &s.label)).collect();
    let (state, trace) = train_detector(&initial, &samples, &cfg.model)?;
    let out = cfg.out_dir()?;
    state.save(&out.join(MODEL_FILE))?;
    let mut csv = String::from("epoch,lr,loss,cls_loss,reg_loss,acc\n");
    for e in &trace {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{:.4}",
            e.epoch, e.lr, e.loss.total, e.loss.cls_loss, e.loss.reg_loss, e.acc
        );
    }
    write_text(&out.join("trace.csv"), &csv)
}

fn limited<'a>(cfg: &RunConfig, scenes: &'a [Scene]) -> &'a [Scene] {
    &scenes[..cfg.heatmap.limit.unwrap_or(scenes.len()).min(scenes.len())]
}

pub fn heatmap(cfg: &RunConfig) -> Result<()> {
    let state = DetectorState::load(cfg.model_path()?)?;
    let scenes = load_scenes(cfg.data_dir()?)?;
    let kind = cfg.poison.strategy.kind;
    let out = cfg.out_dir()?;
    let (maps_dir, overlay_dir) = (out.join("heatmaps"), out.join("overlays"));
    create_dir(&maps_dir)?;
    create_dir(&overlay_dir)?;
    let mut csv = String::from("sample,attack,entropy,lane_fraction,argmax_row,argmax_col\n");
    for (i, scene) in limited(cfg, &scenes).iter().enumerate() {
        let map = compute_heatmap(&state, &scene.image, &scene.label, kind, &cfg.heatmap.config)?;
        let name = format!("{i:05}.png");
        map.export(&maps_dir.join(&name))?;
        map.overlay(&scene.image, &overlay_dir.join(&name))?;
        let fmt = |r: Result<f64>| r.map(|v| format!("{v:.6}")).unwrap_or_default();
        let (r, c) = map.argmax();
        let _ = writeln!(
            csv,
            "{i},{},{},{},{r},{c}",
            kind.name(),
            fmt(attention_entropy(&map)),
            fmt(attention_on_region(&map, &scene.lane_mask)),
        );
    }
    write_text(&out.join("summary.csv"), &csv)
}

pub fn place(cfg: &RunConfig) -> Result<()> {
    let state = DetectorState::load(cfg.model_path()?)?;
    let scenes = load_scenes(cfg.data_dir()?)?;
    let kind = cfg.poison.strategy.kind;
    let out = cfg.out_dir()?;
    let cand_dir = out.join("candidates");
    create_dir(&cand_dir)?;
    let p = &cfg.placement;
    let mut csv = String::from("sample,row,col,height,width,score\n");
    for (i, scene) in limited(cfg, &scenes).iter().enumerate() {
        let cands = match enumerate_candidates(&scene.road_mask, p.window, p.stride, p.min_inside) {
            Ok(c) => c,
            Err(Error::EmptyCandidates) => {
                log::warn!("sample {i}: no window satisfies the road coverage");
                continue;
            }
            Err(e) => return Err(e),
        };
        let map = compute_heatmap(&state, &scene.image, &scene.label, kind, &cfg.heatmap.config)?;
        write_candidates_csv(&score_candidates(&cands, &map)?, &cand_dir.join(format!("{i:05}.csv")))?;
        let best = score_and_select(&cands, &map)?;
        let _ = writeln!(
            csv,
            "{i},{},{},{},{},{:.6}",
            best.row,
            best.col,
            best.height,
            best.width,
            best.score.unwrap_or(f64::NAN)
        );
    }
    write_text(&out.join("selection.csv"), &csv)
}

/// Surrogate and denoiser for the configured trigger. A denoiser is trained
/// on `scenes` and saved to the output directory when none is given.
fn attack_models(cfg: &RunConfig, scenes: &[Scene]) -> Result<(Option<DetectorState>, Option<ToyDenoiser>)> {
    let surrogate = match (&cfg.inputs.surrogate, cfg.poison.placement) {
        (Some(path), _) => Some(DetectorState::load(path)?),
        (None, PlacementMode::Heatmap) => {
            return Err(Error::Config("heatmap placement needs --surrogate".into()));
        }
        (None, _) => None,
    };
    let denoiser = match (&cfg.inputs.denoiser, cfg.poison.trigger.texture()) {
        (Some(path), _) => Some(ToyDenoiser::load(path)?),
        (None, Some(_)) => {
            let (den, losses) = train_toy_denoiser(scenes, &cfg.schedule, &cfg.denoiser)?;
            log::info!("trained denoiser, final loss {:?}", losses.last());
            den.save(&cfg.out_dir()?.join(DENOISER_FILE))?;
            Some(den)
        }
        (None, None) => None,
    };
    Ok((surrogate, denoiser))
}

fn context<'a>(models: &'a (Option<DetectorState>, Option<ToyDenoiser>)) -> PoisonContext<'a> {
    PoisonContext {
        surrogate: models.0.as_ref(),
        denoiser: models.1.as_ref().map(|d| d as &dyn Denoiser),
    }
}

pub fn poison(cfg: &RunConfig) -> Result<()> {
    let data = cfg.data_dir()?;
    let (source, scenes) = read_dataset(data)?;
    let pcfg = cfg.poison_config();
    pcfg.validate()?;
    let models = attack_models(cfg, &scenes)?;
    let (poisoned, manifest) = poison_dataset(&scenes, &pcfg, &context(&models))?;
    let out = cfg.out_dir()?;
    write_dataset(&poisoned, out, cfg.seed, &source.split, serde_json::to_value(&pcfg)?)?;
    write_text(&out.join(POISON_MANIFEST), &serde_json::to_string_pretty(&manifest)?)?;
    log::info!(
        "poisoned {} of {} samples ({} replaced)",
        manifest.records.len(),
        scenes.len(),
        manifest.skipped.len()
    );
    Ok(())
}

/// The poisoned samples of a poisoned training set, paired with the labels
/// of the clean set it was built from.
fn poisoned_split(poisoned_dir: &Path, clean_dir: &Path) -> Result<TriggeredSet> {
    let path = poisoned_dir.join(POISON_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: PoisonManifest = serde_json::from_str(&text)?;
    let (_, poisoned) = read_dataset(poisoned_dir)?;
    let clean = load_scenes(clean_dir)?;
    if poisoned.len() != clean.len() || manifest.records.is_empty() {
        return Err(Error::Config(format!(
            "{} does not match the clean set {}",
            poisoned_dir.display(),
            clean_dir.display()
        )));
    }
    let mut set = TriggeredSet {
        images: Vec::new(),
        originals: Vec::new(),
        attacked: Vec::new(),
        triggers: Vec::new(),
        kind: manifest.config.strategy.kind,
    };
    for r in &manifest.records {
        set.images.push(poisoned[r.source].image.clone());
        set.originals.push(clean[r.source].label.clone());
        set.attacked.push(poisoned[r.source].label.clone());
        set.triggers.push(r.trigger.clone());
    }
    Ok(set)
}

fn triggered_set(cfg: &RunConfig, scenes: &[Scene]) -> Result<TriggeredSet> {
    let pcfg = cfg.poison_config();
    pcfg.validate()?;
    let models = attack_models(cfg, scenes)?;
    build_triggered_testset(scenes, &pcfg, &context(&models))
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    if cfg.inputs.models.is_empty() {
        return Err(Error::Config("eval needs at least one --model".into()));
    }
    let models = cfg
        .inputs
        .models
        .iter()
        .zip(model_names(&cfg.inputs.models))
        .map(|(p, name)| DetectorState::load(p).map(|m| (name, m)))
        .collect::<Result<Vec<_>>>()?;
    let scenes = load_scenes(cfg.data_dir()?)?;
    let triggered = triggered_set(cfg, &scenes)?;
    let thr = cfg.eval.threshold_px;
    let hash = config_hash(cfg)?;

    let clean_images: Vec<&Image> = scenes.iter().map(|s| &s.image).collect();
    let trig_images: Vec<&Image> = triggered.images.iter().collect();
    let stealth = stealth_report(&trig_images, &clean_images, &triggered.triggers)?;

    // ASR on the poisoned training samples themselves, reported next to the
    // triggered test split when the poisoned set and its clean source are given.
    let train_split = match (&cfg.inputs.poisoned, &cfg.inputs.clean) {
        (Some(p), Some(c)) => Some(poisoned_split(p, c)?),
        (Some(_), None) => return Err(Error::Config("--poisoned needs --clean".into())),
        _ => None,
    };
    let strategy = format!("{}/{}", placement_name(cfg.poison.placement), cfg.poison.trigger.name());
    let mut rows = Vec::new();
    let mut records = BTreeMap::new();
    for (name, model) in &models {
        let mut record = evaluate(model, &scenes, &triggered, thr, hash.clone())?;
        record.stealth_ssim = Some(stealth.mean_ssim);
        rows.push(EvalRow {
            model: name.clone(),
            attack: triggered.kind.name().into(),
            strategy: strategy.clone(),
            acc_clean: record.acc_clean,
            asr: record.asr[triggered.kind.name()],
        });
        log::info!("{name}: ACC {:.4} ASR {:.4}", record.acc_clean, record.asr[triggered.kind.name()]);
        if let Some(split) = &train_split {
            let asr = attack_success(model, split, thr)?;
            let key = format!("{}_train_poisoned", split.kind.name());
            rows.push(EvalRow {
                model: name.clone(),
                attack: key.clone(),
                strategy: strategy.clone(),
                acc_clean: record.acc_clean,
                asr,
            });
            record.asr.insert(key, asr);
        }
        records.insert(name.clone(), record);
    }
    let out = cfg.out_dir()?;
    write_eval_csv(&rows, &out.join("metrics.csv"))?;
    stealth.write_csv(&out.join("stealth.csv"))?;
    let summary = serde_json::json!({ hash: records });
    write_text(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)
}

pub fn defend(cfg: &RunConfig) -> Result<()> {
    let state = DetectorState::load(cfg.model_path()?)?;
    let scenes = load_scenes(cfg.data_dir()?)?;
    let triggered = triggered_set(cfg, &scenes)?;
    let thr = cfg.eval.threshold_px;
    let out = cfg.out_dir()?;
    match cfg.defend.method {
        DefenseMethod::Prune => {
            let probe_scenes = match &cfg.inputs.clean {
                Some(dir) => load_scenes(dir)?,
                None => scenes.clone(),
            };
            let probe: Vec<&Image> = probe_scenes.iter().map(|s| &s.image).collect();
            let report = prune_defense(&state, &probe, cfg.defend.prune_step, &scenes, &triggered, thr)?;
            report.write_csv(&out.join("prune.csv"))
        }
        DefenseMethod::Finetune => {
            let dir = cfg
                .inputs
                .clean
                .as_deref()
                .ok_or_else(|| Error::Config("fine-tuning needs --clean".into()))?;
            let clean = load_scenes(dir)?;
            let samples: Vec<(&Image, &LaneLabel)> = clean.iter().map(|s| (&s.image, &s.label)).collect();
            let tcfg = TrainConfig {
                epochs: cfg.defend.finetune_epochs,
                lr: cfg.defend.finetune_lr,
                ..cfg.model.clone()
            };
            let (tuned, report) = finetune_defense(&state, &samples, &tcfg, &scenes, &triggered, thr)?;
            tuned.save(&out.join("finetuned.ckpt"))?;
            write_text(&out.join("finetune.json"), &serde_json::to_string_pretty(&report)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colliding_stems_fall_back_to_directories() {
        let paths: Vec<PathBuf> = ["runs/clean/model.ckpt", "runs/infected/model.ckpt", "other.ckpt"]
            .iter()
            .map(PathBuf::from)
            .collect();
        assert_eq!(model_names(&paths), ["clean", "infected", "other"]);
    }
}
