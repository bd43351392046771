use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lanetrap_core::attack::{AttackKind, AttackStrategy};
use lanetrap_core::detector::TrainConfig;
use lanetrap_core::eval::DEFAULT_THRESHOLD_PX;
use lanetrap_core::heatmap::HeatmapConfig;
use lanetrap_core::placement::PlacementConfig;
use lanetrap_core::poison::{PlacementMode, PoisonConfig};
use lanetrap_core::scene::GeneratorConfig;
use lanetrap_core::trigger::{DenoiserTrainConfig, DiffusionSchedule, TriggerKind};
use lanetrap_core::{Error, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// Everything a command reads. Built from defaults, then the `--config`
/// file, then command-line flags; the result is written next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub inputs: Inputs,
    pub synth: SynthBlock,
    pub generator: GeneratorConfig,
    pub model: TrainConfig,
    pub heatmap: HeatmapBlock,
    pub placement: PlacementConfig,
    pub schedule: DiffusionSchedule,
    pub denoiser: DenoiserTrainConfig,
    pub poison: PoisonBlock,
    pub eval: EvalBlock,
    pub defend: DefendBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            threads: None,
            inputs: Inputs::default(),
            synth: SynthBlock::default(),
            generator: GeneratorConfig::default(),
            model: TrainConfig::default(),
            heatmap: HeatmapBlock::default(),
            placement: PlacementConfig::default(),
            schedule: DiffusionSchedule::default(),
            denoiser: DenoiserTrainConfig::default(),
            poison: PoisonBlock::default(),
            eval: EvalBlock::default(),
            defend: DefendBlock::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    /// Dataset directory the command works on.
    pub data: Option<PathBuf>,
    /// Clean training data: fine-tuning input, or the source of `poisoned`.
    pub clean: Option<PathBuf>,
    /// Detector checkpoints; `train` uses the first as its starting point.
    pub models: Vec<PathBuf>,
    /// Poisoned training set whose poisoned samples `eval` also scores.
    pub poisoned: Option<PathBuf>,
    pub surrogate: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthBlock {
    pub n: Option<usize>,
    pub split: String,
}

impl Default for SynthBlock {
    fn default() -> Self {
        Self {
            n: None,
            split: "train".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapBlock {
    pub config: HeatmapConfig,
    /// Only the first `limit` scenes are processed.
    pub limit: Option<usize>,
}

impl Default for HeatmapBlock {
    fn default() -> Self {
        Self {
            config: HeatmapConfig::default(),
            limit: Some(8),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoisonBlock {
    pub rate: f64,
    pub strategy: AttackStrategy,
    pub trigger: TriggerKind,
    pub placement: PlacementMode,
}

impl Default for PoisonBlock {
    fn default() -> Self {
        Self {
            rate: 0.10,
            strategy: AttackStrategy::new(AttackKind::Lda),
            trigger: TriggerKind::Mud,
            placement: PlacementMode::Heatmap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub threshold_px: f64,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            threshold_px: DEFAULT_THRESHOLD_PX,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DefenseMethod {
    Prune,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefendBlock {
    pub method: DefenseMethod,
    pub prune_step: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl Default for DefendBlock {
    fn default() -> Self {
        Self {
            method: DefenseMethod::Prune,
            prune_step: 4,
            finetune_epochs: 10,
            finetune_lr: 0.002,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required".into()))
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.inputs
            .data
            .as_deref()
            .ok_or_else(|| Error::Config("--data is required".into()))
    }

    pub fn model_path(&self) -> Result<&Path> {
        self.inputs
            .models
            .first()
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config("--model is required".into()))
    }

    pub fn poison_config(&self) -> PoisonConfig {
        PoisonConfig {
            rate: self.poison.rate,
            strategy: self.poison.strategy.clone(),
            trigger: self.poison.trigger,
            placement: self.poison.placement,
            window: self.placement,
            heatmap: self.heatmap.config,
            schedule: self.schedule.clone(),
            surrogate: self.inputs.surrogate.clone(),
            seed: self.seed,
        }
    }

    pub fn write_snapshot(&self) -> Result<()> {
        let dir = self.out_dir()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Parses `heatmap`, `random` or `fixed:ROW,COL`.
pub fn parse_placement(s: &str) -> std::result::Result<PlacementMode, String> {
    match s {
        "heatmap" => Ok(PlacementMode::Heatmap),
        "random" => Ok(PlacementMode::Random),
        _ => {
            let rest = s
                .strip_prefix("fixed:")
                .ok_or_else(|| format!("unknown placement '{s}'"))?;
            let (r, c) = rest
                .split_once(',')
                .ok_or_else(|| "fixed placement needs ROW,COL".to_string())?;
            Ok(PlacementMode::Fixed {
                row: r.trim().parse().map_err(|e| format!("bad row: {e}"))?,
                col: c.trim().parse().map_err(|e| format!("bad column: {e}"))?,
            })
        }
    }
}
