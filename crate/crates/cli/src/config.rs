//! Experiment configuration: TOML file, `--set key=value` overrides, and the
//! resolved form echoed into every run manifest.

use std::path::{Path, PathBuf};

use neva_core::attention::{AttentionConfig, NevaTrainConfig};
use neva_core::baselines::BaselineConfig;
use neva_core::nn::{AdamConfig, AutoencoderConfig, ConvNetConfig};
use neva_core::{EvaluationConfig, FoveationConfig, GridSpec, TaskKind, TaskTrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset manifest used for training.
    pub train_manifest: Option<PathBuf>,
    /// Dataset manifest used for generation, evaluation and plots.
    pub eval_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub input_size: [usize; 2],
    pub classifier: ConvNetConfig,
    pub autoencoder: AutoencoderConfig,
    pub noise_std: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        let d = TaskTrainConfig::default();
        TaskSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.optimizer.learning_rate,
            input_size: d.input_size,
            classifier: d.classifier,
            autoencoder: d.autoencoder,
            noise_std: d.noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Training rollout length; unset means `scanpath_length`.
    pub horizon: Option<usize>,
    pub unroll_depth: usize,
    /// Initial fovea width multiplier during training (1 disables the warm-up).
    pub fovea_warmup: f64,
    pub fovea_warmup_epochs: usize,
    pub input_size: [usize; 2],
    pub network: ConvNetConfig,
    pub output_init_scale: f64,
}

impl Default for AttentionSection {
    fn default() -> Self {
        let t = NevaTrainConfig::default();
        let a = AttentionConfig::default();
        AttentionSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.optimizer.learning_rate,
            horizon: None,
            unroll_depth: t.unroll_depth,
            fovea_warmup: t.fovea_warmup,
            fovea_warmup_epochs: t.fovea_warmup_epochs,
            input_size: a.input_size,
            network: a.backbone,
            output_init_scale: a.output_init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    /// Nearest-neighbour upscaling factor of every panel.
    pub scale: usize,
}

impl Default for PlotSection {
    fn default() -> Self {
        PlotSection { scale: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: TaskKind,
    /// Fixations per generated scanpath (T).
    pub scanpath_length: usize,
    /// Largest window length of the time-delay embedding metric.
    pub max_k: usize,
    pub grid: GridSpec,
    pub foveation: FoveationConfig,
    pub data: DataSection,
    pub task_model: TaskSection,
    pub attention: AttentionSection,
    pub baselines: BaselineConfig,
    pub plot: PlotSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("neva-out"),
            task: TaskKind::Classification,
            scanpath_length: 10,
            max_k: 5,
            grid: GridSpec::default(),
            foveation: FoveationConfig::default(),
            data: DataSection::default(),
            task_model: TaskSection::default(),
            attention: AttentionSection::default(),
            baselines: BaselineConfig::default(),
            plot: PlotSection::default(),
        }
    }
}

/// Sets `dotted.key = value` in a TOML table. Values parse as TOML when they
/// can and fall back to plain strings.
fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override {assignment:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("override {key:?}: {p} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_relative() { base.join(p) } else { p.to_path_buf() };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl ExperimentConfig {
    /// Reads the config file (if any), applies overrides, resolves paths and validates.
    ///
    /// Relative paths inside the file are taken relative to the file; paths
    /// given as overrides are taken relative to the working directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let (mut file_table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                (table, p.parent().unwrap_or(Path::new(".")).to_path_buf())
            }
            None => (toml::Table::new(), PathBuf::from(".")),
        };
        let mut cfg: ExperimentConfig = file_table
            .clone()
            .try_into()
            .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        cfg.resolve_paths(&base);

        if !overrides.is_empty() {
            // Re-serialize the resolved file config so overrides layer on top of it.
            file_table = toml::Table::try_from(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
            for o in overrides {
                apply_override(&mut file_table, o)?;
            }
            cfg = file_table
                .try_into()
                .map_err(|e| CliError::usage(format!("invalid override: {e}")))?;
            cfg.resolve_paths(Path::new("."));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.out_dir = absolute(base, &self.out_dir);
        for p in [&mut self.data.train_manifest, &mut self.data.eval_manifest].into_iter().flatten() {
            *p = absolute(base, p);
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.scanpath_length == 0 {
            return Err(CliError::usage("scanpath_length must be at least 1"));
        }
        if self.plot.scale == 0 {
            return Err(CliError::usage("plot.scale must be at least 1"));
        }
        self.evaluation().validate()?;
        self.task_train().validate()?;
        self.attention_train().validate()?;
        let a = &self.attention;
        if a.input_size.iter().any(|&s| s < 8) {
            return Err(CliError::usage("attention.input_size must be at least 8x8"));
        }
        let b = &self.baselines;
        if !(b.sigma_center > 0.0) || !(b.ior_radius > 0.0) {
            return Err(CliError::usage("baselines.sigma_center and baselines.ior_radius must be positive"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.attention.horizon.unwrap_or(self.scanpath_length)
    }

    pub fn evaluation(&self) -> EvaluationConfig {
        EvaluationConfig {
            grid: self.grid,
            max_k: self.max_k,
            length: self.scanpath_length,
            truncate_viewers: true,
        }
    }

    pub fn task_train(&self) -> TaskTrainConfig {
        let t = &self.task_model;
        TaskTrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: AdamConfig {
                learning_rate: t.learning_rate,
                ..AdamConfig::default()
            },
            input_size: t.input_size,
            classifier: t.classifier.clone(),
            autoencoder: t.autoencoder.clone(),
            noise_std: t.noise_std,
            seed: self.seed,
        }
    }

    pub fn attention_model(&self, channels: usize) -> AttentionConfig {
        let a = &self.attention;
        AttentionConfig {
            input_size: a.input_size,
            channels,
            backbone: a.network.clone(),
            output_init_scale: a.output_init_scale,
            seed: self.seed.wrapping_add(1),
        }
    }

    pub fn attention_train(&self) -> NevaTrainConfig {
        let a = &self.attention;
        NevaTrainConfig {
            horizon: self.horizon(),
            unroll_depth: a.unroll_depth,
            epochs: a.epochs,
            batch_size: a.batch_size,
            optimizer: AdamConfig {
                learning_rate: a.learning_rate,
                ..AdamConfig::default()
            },
            foveation: self.foveation,
            fovea_warmup: a.fovea_warmup,
            fovea_warmup_epochs: a.fovea_warmup_epochs,
            seed: self.seed.wrapping_add(2),
        }
    }

    pub fn train_manifest(&self) -> CliResult<&Path> {
        self.data
            .train_manifest
            .as_deref()
            .ok_or_else(|| CliError::usage("data.train_manifest is not set"))
    }

    pub fn eval_manifest(&self) -> CliResult<&Path> {
        self.data
            .eval_manifest
            .as_deref()
            .ok_or_else(|| CliError::usage("data.eval_manifest is not set"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.horizon(), 10);
    }

    #[test]
    fn overrides_apply_to_nested_keys() {
        let cfg = ExperimentConfig::load(
            None,
            &[
                "attention.epochs=3".into(),
                "foveation.gamma = 0.5".into(),
                "task=\"reconstruction\"".into(),
                "out_dir=somewhere".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.attention.epochs, 3);
        assert_eq!(cfg.foveation.gamma, 0.5);
        assert_eq!(cfg.task, TaskKind::Reconstruction);
        assert!(cfg.out_dir.is_absolute() && cfg.out_dir.ends_with("somewhere"));
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        for bad in ["scanpath_length=0", "attention.unroll_depth=0", "foveation.sigma_fovea=-1", "nope=1"] {
            let err = ExperimentConfig::load(None, &[bad.to_string()]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn file_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "out_dir = \"out\"\n[data]\ntrain_manifest = \"d/manifest.toml\"\n").unwrap();
        let cfg = ExperimentConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.out_dir, std::path::absolute(dir.path().join("out")).unwrap());
        assert_eq!(
            cfg.data.train_manifest.unwrap(),
            std::path::absolute(dir.path().join("d/manifest.toml")).unwrap()
        );
    }
}
