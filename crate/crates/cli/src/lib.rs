//! Experiment harness for NeVA: dataset creation, task and attention
//! training, scanpath generation, evaluation and figures.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{default_method_name, BaselineName, CommandSpec, GenerateMethod};
use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "neva", version, about = "Task-driven visual attention: train, generate, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every experiment command.
#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set attention.epochs=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
}

impl Common {
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref(), &self.overrides)?;
        let abs = |p: &PathBuf| std::path::absolute(p).map_err(CliError::from);
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = &self.out_dir {
            cfg.out_dir = abs(p)?;
        }
        if let Some(p) = &self.train_manifest {
            cfg.data.train_manifest = Some(abs(p)?);
        }
        if let Some(p) = &self.eval_manifest {
            cfg.data.eval_manifest = Some(abs(p)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic quadrant-shapes split with oracle viewer fixations to --out-dir.
    MakeDataset {
        #[command(flatten)]
        common: Common,
        /// Number of images.
        #[arg(long)]
        n: usize,
        /// Oracle viewers per image (0 for none).
        #[arg(long, default_value_t = 5)]
        subjects: usize,
        /// Dataset name; defaults to the output directory name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Train the task model on the training split.
    TrainTask {
        #[command(flatten)]
        common: Common,
    },
    /// Train the attention network against a frozen task model.
    TrainAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task_checkpoint: PathBuf,
    },
    /// Generate one scanpath per evaluation image.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Attention checkpoint for NeVA scanpaths.
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        attention: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<BaselineName>,
        /// Method label in the output file.
        #[arg(long)]
        name: Option<String>,
    },
    /// Score scanpath files against human fixations.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "scanpaths", required = true, num_args = 1..)]
        scanpaths: Vec<PathBuf>,
        /// Human fixation file; defaults to the evaluation dataset's fixations.
        #[arg(long)]
        human: Option<PathBuf>,
    },
    /// Draw stimulus, memory heatmap and final perceived image per scanpath.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scanpaths: PathBuf,
        /// Restrict to these methods. Repeatable.
        #[arg(long = "method")]
        methods: Vec<String>,
        /// Restrict to these images. Repeatable.
        #[arg(long = "image-id")]
        image_ids: Vec<String>,
    },
    /// Replay a run manifest.
    Rerun {
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Executes a parsed command line; returns the written run manifest.
pub fn run(cli: Cli) -> CliResult<PathBuf> {
    let (spec, cfg) = match cli.command {
        Command::Rerun { manifest, out_dir } => return commands::rerun(&manifest, out_dir.as_deref()),
        Command::MakeDataset { common, n, subjects, name } => {
            let cfg = common.resolve()?;
            let dataset_name = name.unwrap_or_else(|| {
                cfg.out_dir
                    .file_name()
                    .map_or_else(|| "synthetic".into(), |s| s.to_string_lossy().into_owned())
            });
            (CommandSpec::MakeDataset { n, subjects, dataset_name }, cfg)
        }
        Command::TrainTask { common } => (CommandSpec::TrainTask, common.resolve()?),
        Command::TrainAttention { common, task_checkpoint } => {
            let task_checkpoint = std::path::absolute(task_checkpoint)?;
            (CommandSpec::TrainAttention { task_checkpoint }, common.resolve()?)
        }
        Command::Generate {
            common,
            attention,
            baseline,
            name,
        } => {
            let cfg = common.resolve()?;
            let method = match (attention, baseline) {
                (Some(p), _) => GenerateMethod::Neva {
                    checkpoint: std::path::absolute(p)?,
                },
                (None, Some(baseline)) => GenerateMethod::Baseline { baseline },
                (None, None) => return Err(CliError::usage("pass --attention or --baseline")),
            };
            let method_name = name.unwrap_or_else(|| default_method_name(&method, cfg.task));
            (CommandSpec::Generate { method, method_name }, cfg)
        }
        Command::Evaluate { common, scanpaths, human } => {
            let scanpaths = scanpaths
                .iter()
                .map(std::path::absolute)
                .collect::<std::io::Result<Vec<_>>>()?;
            let human = human.map(std::path::absolute).transpose()?;
            (CommandSpec::Evaluate { scanpaths, human }, common.resolve()?)
        }
        Command::Plot {
            common,
            scanpaths,
            methods,
            image_ids,
        } => (
            CommandSpec::Plot {
                scanpaths: std::path::absolute(scanpaths)?,
                methods,
                image_ids,
            },
            common.resolve()?,
        ),
    };
    commands::execute(&spec, &cfg)
}
