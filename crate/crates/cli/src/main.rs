mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_placement, DefenseMethod, RunConfig};
use lanetrap_core::attack::AttackKind;
use lanetrap_core::poison::PlacementMode;
use lanetrap_core::trigger::TriggerKind;
use lanetrap_core::Error;

/// Backdoor-poisoning lab for a small lane detector.
#[derive(Parser, Debug)]
#[command(name = "lanetrap", version)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Number of scenes.
        #[arg(long)]
        n: Option<usize>,
        /// Split name recorded in the manifest.
        #[arg(long)]
        split: Option<String>,
    },
    /// Train a detector.
    Train {
        /// Training dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Export attention heatmaps and overlays.
    Heatmap {
        /// Detector checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `lda` uses the existence loss, `loa` and `lra` the regression loss.
        #[arg(long, visible_alias = "strategy")]
        attack: Option<AttackKind>,
        /// Number of samples to process.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score candidate trigger windows.
    Place {
        /// Detector checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `lda`, `loa` or `lra`.
        #[arg(long, visible_alias = "strategy")]
        attack: Option<AttackKind>,
        /// Number of samples to process.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write a poisoned copy of a dataset.
    Poison {
        /// Clean dataset to poison.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Measure clean accuracy and attack success.
    Eval {
        /// One or more detector checkpoints.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Clean test dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Poisoned training set to score as well.
        #[arg(long)]
        poisoned: Option<PathBuf>,
        /// Clean source of `--poisoned`.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Run a defense against an infected model.
    Defend {
        /// Infected detector checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Clean test dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Clean training data for fine-tuning.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<DefenseMethod>,
        /// Channels pruned per step.
        #[arg(long)]
        prune_step: Option<usize>,
        /// Fine-tuning epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        attack: AttackArgs,
    },
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// `lda`, `loa` or `lra`.
    #[arg(long, visible_alias = "strategy")]
    attack: Option<AttackKind>,
    /// `mud`, `cone`, `square` or `blended`.
    #[arg(long)]
    trigger: Option<TriggerKind>,
    /// Fraction of training samples to poison.
    #[arg(long)]
    rate: Option<f64>,
    /// `heatmap`, `random` or `fixed:ROW,COL`.
    #[arg(long, value_parser = parse_placement)]
    placement: Option<PlacementMode>,
    /// Model whose heatmaps choose the trigger window.
    #[arg(long)]
    surrogate: Option<PathBuf>,
    /// Trained denoiser; one is trained on the data when omitted.
    #[arg(long)]
    denoiser: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl AttackArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(kind) = self.attack {
            cfg.poison.strategy.kind = kind;
        }
        set(&mut cfg.poison.trigger, self.trigger);
        set(&mut cfg.poison.rate, self.rate);
        set(&mut cfg.poison.placement, self.placement);
        if self.surrogate.is_some() {
            cfg.inputs.surrogate = self.surrogate;
        }
        if self.denoiser.is_some() {
            cfg.inputs.denoiser = self.denoiser;
        }
    }
}

fn resolve(cli: Cli) -> lanetrap_core::Result<(RunConfig, Command)> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if cli.out.is_some() {
        cfg.out = cli.out;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let mut command = cli.command;
    match &mut command {
        Command::Synth { n, split } => {
            if n.is_some() {
                cfg.synth.n = *n;
            }
            set(&mut cfg.synth.split, split.take());
        }
        Command::Train {
            data,
            init,
            epochs,
            lr,
            batch,
        } => {
            set_path(&mut cfg.inputs.data, data.take());
            if let Some(p) = init.take() {
                cfg.inputs.models = vec![p];
            }
            set(&mut cfg.model.epochs, *epochs);
            set(&mut cfg.model.lr, *lr);
            set(&mut cfg.model.batch, *batch);
        }
        Command::Heatmap {
            model,
            data,
            attack,
            limit,
        }
        | Command::Place {
            model,
            data,
            attack,
            limit,
        } => {
            set_path(&mut cfg.inputs.data, data.take());
            if let Some(p) = model.take() {
                cfg.inputs.models = vec![p];
            }
            if let Some(kind) = attack {
                cfg.poison.strategy.kind = *kind;
            }
            if limit.is_some() {
                cfg.heatmap.limit = *limit;
            }
        }
        Command::Poison { data, attack } => {
            set_path(&mut cfg.inputs.data, data.take());
            take_attack(attack).apply(&mut cfg);
        }
        Command::Eval {
            models,
            data,
            poisoned,
            clean,
            attack,
        } => {
            set_path(&mut cfg.inputs.data, data.take());
            set_path(&mut cfg.inputs.poisoned, poisoned.take());
            set_path(&mut cfg.inputs.clean, clean.take());
            if !models.is_empty() {
                cfg.inputs.models = std::mem::take(models);
            }
            take_attack(attack).apply(&mut cfg);
        }
        Command::Defend {
            model,
            data,
            clean,
            method,
            prune_step,
            epochs,
            attack,
        } => {
            set_path(&mut cfg.inputs.data, data.take());
            set_path(&mut cfg.inputs.clean, clean.take());
            if let Some(p) = model.take() {
                cfg.inputs.models = vec![p];
            }
            set(&mut cfg.defend.method, *method);
            set(&mut cfg.defend.prune_step, *prune_step);
            set(&mut cfg.defend.finetune_epochs, *epochs);
            take_attack(attack).apply(&mut cfg);
        }
    }
    cfg.model.seed = cfg.seed;
    cfg.denoiser.seed = cfg.seed;
    Ok((cfg, command))
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn take_attack(a: &mut AttackArgs) -> AttackArgs {
    AttackArgs {
        attack: a.attack.take(),
        trigger: a.trigger.take(),
        rate: a.rate.take(),
        placement: a.placement.take(),
        surrogate: a.surrogate.take(),
        denoiser: a.denoiser.take(),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Range(_) => 2,
        Error::Io { .. } | Error::DatasetWrite(_) | Error::Parse { .. } | Error::Image(_) | Error::Json(_) => 3,
        Error::Checkpoint(_) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> lanetrap_core::Result<()> {
    let (cfg, command) = resolve(cli)?;
    cfg.out_dir()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    cfg.write_snapshot()?;
    match command {
        Command::Synth { .. } => commands::synth(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Heatmap { .. } => commands::heatmap(&cfg),
        Command::Place { .. } => commands::place(&cfg),
        Command::Poison { .. } => commands::poison(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Defend { .. } => commands::defend(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
