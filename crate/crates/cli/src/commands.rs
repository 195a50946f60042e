//! Subcommand implementations. Every command writes its outputs under the
//! configured output directory together with a run manifest that can replay it.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use neva_core::attention::{generate_scanpath, loss_after_fixations, mean_loss_after_rollout, train_attention};
use neva_core::baselines::{center_scanpath, derive_seed, random_scanpath, saliency_itti_lite, wta_scanpath};
use neva_core::data::{
    export_synthetic, group_by_image, load_dataset, load_fixations_with_sizes, load_scanpaths, write_scanpaths,
    Dataset, DatasetManifest, MethodScanpath, OracleViewerConfig, SyntheticConfig,
};
use neva_core::metrics::{evaluate, write_rows_csv, write_summary_csv, MethodScanpaths, HUMAN};
use neva_core::tasks::{accuracy, mean_loss, train_classifier, train_reconstructor, TrainingLog};
use neva_core::{init_state, AttentionModel, LabeledStimulus, Scanpath, Stimulus, Target, TaskKind, TaskModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::plot::{render_panels, PANELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BaselineName {
    Random,
    Center,
    Wta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GenerateMethod {
    Neva { checkpoint: PathBuf },
    Baseline { baseline: BaselineName },
}

/// A command with its non-config arguments; stored in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum CommandSpec {
    MakeDataset {
        n: usize,
        /// Oracle viewers per image; 0 writes no fixation file.
        subjects: usize,
        dataset_name: String,
    },
    TrainTask,
    TrainAttention {
        task_checkpoint: PathBuf,
    },
    Generate {
        method: GenerateMethod,
        method_name: String,
    },
    Evaluate {
        scanpaths: Vec<PathBuf>,
        human: Option<PathBuf>,
    },
    Plot {
        scanpaths: PathBuf,
        methods: Vec<String>,
        image_ids: Vec<String>,
    },
}

impl CommandSpec {
    fn manifest_file(&self) -> String {
        match self {
            CommandSpec::MakeDataset { .. } => "make-dataset.manifest.toml".into(),
            CommandSpec::TrainTask => "train-task.manifest.toml".into(),
            CommandSpec::TrainAttention { .. } => "train-attention.manifest.toml".into(),
            CommandSpec::Generate { method_name, .. } => format!("generate-{method_name}.manifest.toml"),
            CommandSpec::Evaluate { .. } => "evaluate.manifest.toml".into(),
            CommandSpec::Plot { .. } => "plot.manifest.toml".into(),
        }
    }
}

/// Default method label written into scanpath files.
pub fn default_method_name(method: &GenerateMethod, task: TaskKind) -> String {
    match method {
        GenerateMethod::Neva { .. } => match task {
            TaskKind::Classification => "NeVA_C".into(),
            TaskKind::Reconstruction => "NeVA_R".into(),
        },
        GenerateMethod::Baseline { baseline } => match baseline {
            BaselineName::Random => "Random".into(),
            BaselineName::Center => "Center".into(),
            BaselineName::Wta => "WTA".into(),
        },
    }
}

/// Everything needed to replay a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: CommandSpec,
    /// Outputs relative to `config.out_dir`.
    pub outputs: Vec<PathBuf>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read manifest {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    fn save(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Internal(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

/// Runs `spec` and writes its manifest; returns the manifest path.
pub fn execute(spec: &CommandSpec, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let outputs = match spec {
        CommandSpec::MakeDataset {
            n,
            subjects,
            dataset_name,
        } => make_dataset(cfg, *n, *subjects, dataset_name)?,
        CommandSpec::TrainTask => train_task(cfg)?,
        CommandSpec::TrainAttention { task_checkpoint } => train_attention_cmd(cfg, task_checkpoint)?,
        CommandSpec::Generate { method, method_name } => generate(cfg, method, method_name)?,
        CommandSpec::Evaluate { scanpaths, human } => evaluate_cmd(cfg, scanpaths, human.as_deref())?,
        CommandSpec::Plot {
            scanpaths,
            methods,
            image_ids,
        } => plot(cfg, scanpaths, methods, image_ids)?,
    };
    let manifest = RunManifest {
        tool: "neva".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: spec.clone(),
        outputs,
        config: cfg.clone(),
    };
    let path = cfg.out_dir.join(spec.manifest_file());
    manifest.save(&path)?;
    Ok(path)
}

/// Replays a run manifest, optionally into another output directory.
pub fn rerun(manifest: &Path, out_dir: Option<&Path>) -> CliResult<PathBuf> {
    let mut m = RunManifest::load(manifest)?;
    if let Some(dir) = out_dir {
        m.config.out_dir = std::path::absolute(dir)?;
    }
    execute(&m.command, &m.config)
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", cfg.out_dir.display())))
}

/// Writes through a temporary sibling and renames, so a failed write leaves nothing behind.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> CliResult<()>) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    match write(&tmp) {
        Ok(()) => std::fs::rename(&tmp, path).map_err(CliError::from),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn load_split(path: &Path) -> CliResult<Dataset> {
    let manifest = DatasetManifest::load(path)?;
    let ds = load_dataset(&manifest)?;
    for (file, why) in &ds.image_failures {
        log::warn!("skipped unreadable image {}: {why}", file.display());
    }
    if ds.images.is_empty() {
        return Err(CliError::data(format!("dataset {} has no images", path.display())));
    }
    Ok(ds)
}

/// Images paired with their targets, ordered by image id.
fn labeled_items(ds: &Dataset, kind: TaskKind) -> CliResult<Vec<LabeledStimulus>> {
    match kind {
        TaskKind::Classification => {
            let labels = ds
                .labels
                .as_ref()
                .ok_or_else(|| CliError::data("classification needs a labels_file in the dataset manifest"))?;
            ds.images
                .iter()
                .map(|(id, s)| {
                    let label = labels
                        .get(id)
                        .ok_or_else(|| CliError::data(format!("image {id} has no label")))?;
                    Ok(LabeledStimulus {
                        stimulus: s.clone(),
                        target: Target::Class(*label),
                    })
                })
                .collect()
        }
        TaskKind::Reconstruction => Ok(ds
            .images
            .values()
            .map(|s| LabeledStimulus {
                stimulus: s.clone(),
                target: Target::Image(s.clone()),
            })
            .collect()),
    }
}

fn write_log(path: &Path, log: &TrainingLog) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(neva_core::NevaError::from)?;
    let io = |e: csv::Error| CliError::from(neva_core::NevaError::from(e));
    w.write_record(["epoch", "mean_loss"]).map_err(io)?;
    for (epoch, loss) in log.epoch_losses.iter().enumerate() {
        w.write_record([epoch.to_string(), loss.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn make_dataset(cfg: &ExperimentConfig, n: usize, subjects: usize, name: &str) -> CliResult<Vec<PathBuf>> {
    ensure_out_dir(cfg)?;
    let oracle = OracleViewerConfig {
        subjects,
        ..OracleViewerConfig::default()
    };
    let oracle_arg = (subjects > 0).then_some((&oracle, cfg.scanpath_length));
    export_synthetic(&cfg.out_dir, name, n, cfg.seed, &SyntheticConfig::default(), oracle_arg, Some(cfg.grid))?;
    let mut outputs = vec![PathBuf::from("manifest.toml"), PathBuf::from("labels.csv")];
    if subjects > 0 {
        outputs.push(PathBuf::from("fixations.csv"));
    }
    outputs.push(PathBuf::from("images"));
    Ok(outputs)
}

#[derive(Debug, Serialize)]
struct TaskSummary {
    kind: TaskKind,
    final_train_loss: f64,
    heldout_images: Option<usize>,
    heldout_accuracy: Option<f64>,
    heldout_loss: Option<f64>,
    /// Loss on fully coarse (never fixated) held-out images.
    heldout_loss_coarse: Option<f64>,
}

fn coarse_items(items: &[LabeledStimulus], cfg: &ExperimentConfig) -> CliResult<Vec<LabeledStimulus>> {
    items
        .iter()
        .map(|i| {
            Ok(LabeledStimulus {
                stimulus: init_state(&i.stimulus, &cfg.foveation)?.perceived().clone(),
                target: i.target.clone(),
            })
        })
        .collect()
}

fn train_task(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let ds = load_split(cfg.train_manifest()?)?;
    let items = labeled_items(&ds, cfg.task)?;
    let heldout = match &cfg.data.eval_manifest {
        Some(p) => Some(labeled_items(&load_split(p)?, cfg.task)?),
        None => None,
    };
    let tcfg = cfg.task_train();
    let (model, log) = match cfg.task {
        TaskKind::Classification => train_classifier(&items, &tcfg)?,
        TaskKind::Reconstruction => {
            let stimuli: Vec<Stimulus> = items.into_iter().map(|i| i.stimulus).collect();
            train_reconstructor(&stimuli, &tcfg)?
        }
    };

    let mut summary = TaskSummary {
        kind: cfg.task,
        final_train_loss: *log.epoch_losses.last().expect("at least one epoch"),
        heldout_images: None,
        heldout_accuracy: None,
        heldout_loss: None,
        heldout_loss_coarse: None,
    };
    if let Some(items) = &heldout {
        summary.heldout_images = Some(items.len());
        summary.heldout_loss = Some(mean_loss(&model, items)?);
        summary.heldout_loss_coarse = Some(mean_loss(&model, &coarse_items(items, cfg)?)?);
        if cfg.task == TaskKind::Classification {
            let acc = accuracy(&model, items)?;
            log::info!("held-out accuracy {acc:.4}");
            summary.heldout_accuracy = Some(acc);
        }
    }

    ensure_out_dir(cfg)?;
    write_atomic(&cfg.out_dir.join("task.json"), |p| Ok(model.save(p)?))?;
    write_log(&cfg.out_dir.join("task_log.csv"), &log)?;
    write_json(&cfg.out_dir.join("task_summary.json"), &summary)?;
    Ok(["task.json", "task_log.csv", "task_summary.json"].map(PathBuf::from).to_vec())
}

#[derive(Debug, Serialize)]
struct AttentionSummary {
    horizon: usize,
    first_epoch_loss: f64,
    final_epoch_loss: f64,
    heldout_images: Option<usize>,
    /// Mean task loss after `horizon` attention fixations.
    heldout_loss_attention: Option<f64>,
    /// Same with uniformly random fixations.
    heldout_loss_random: Option<f64>,
}

fn train_attention_cmd(cfg: &ExperimentConfig, task_checkpoint: &Path) -> CliResult<Vec<PathBuf>> {
    let task = TaskModel::load(task_checkpoint)?;
    if task.kind() != cfg.task {
        return Err(CliError::usage(format!(
            "task checkpoint is a {} model but the config says {}",
            task.kind(),
            cfg.task
        )));
    }
    let items = labeled_items(&load_split(cfg.train_manifest()?)?, cfg.task)?;
    let heldout = match &cfg.data.eval_manifest {
        Some(p) => Some(labeled_items(&load_split(p)?, cfg.task)?),
        None => None,
    };
    let channels = items[0].stimulus.channels();
    let attn = AttentionModel::new(cfg.attention_model(channels))?;
    let ncfg = cfg.attention_train();
    let (attn, log) = train_attention(attn, &task, &items, &ncfg)?;

    let mut summary = AttentionSummary {
        horizon: ncfg.horizon,
        first_epoch_loss: log.epoch_losses[0],
        final_epoch_loss: *log.epoch_losses.last().expect("at least one epoch"),
        heldout_images: None,
        heldout_loss_attention: None,
        heldout_loss_random: None,
    };
    if let Some(items) = &heldout {
        summary.heldout_images = Some(items.len());
        summary.heldout_loss_attention =
            Some(mean_loss_after_rollout(&attn, &task, items, ncfg.horizon, &cfg.foveation)?);
        let random: Vec<f64> = items
            .par_iter()
            .enumerate()
            .map(|(k, item)| {
                let sp = random_scanpath("control", ncfg.horizon, derive_seed(cfg.seed, &k.to_string()))?;
                loss_after_fixations(&task, item, &sp.fixations, &cfg.foveation)
            })
            .collect::<neva_core::Result<_>>()?;
        summary.heldout_loss_random = Some(random.iter().sum::<f64>() / random.len() as f64);
    }

    ensure_out_dir(cfg)?;
    write_atomic(&cfg.out_dir.join("attention.json"), |p| Ok(attn.save(p)?))?;
    write_log(&cfg.out_dir.join("attention_log.csv"), &log)?;
    write_json(&cfg.out_dir.join("attention_summary.json"), &summary)?;
    Ok(["attention.json", "attention_log.csv", "attention_summary.json"].map(PathBuf::from).to_vec())
}

pub fn scanpath_file_name(method_name: &str) -> String {
    format!("scanpaths_{method_name}.csv")
}

fn generate(cfg: &ExperimentConfig, method: &GenerateMethod, name: &str) -> CliResult<Vec<PathBuf>> {
    if name == HUMAN || name.is_empty() || name.contains(['/', '\\']) {
        return Err(CliError::usage(format!("{name:?} cannot be used as a method name")));
    }
    // The task model is never needed here; NeVA only loads the attention checkpoint.
    let attn = match method {
        GenerateMethod::Neva { checkpoint } => Some(AttentionModel::load(checkpoint)?),
        GenerateMethod::Baseline { .. } => None,
    };
    let ds = load_split(cfg.eval_manifest()?)?;
    let t = cfg.scanpath_length;
    let images: Vec<(&String, &Stimulus)> = ds.images.iter().collect();
    let results = images
        .par_iter()
        .map(|&(id, s)| -> neva_core::Result<(Scanpath, bool)> {
            let seed = derive_seed(cfg.seed, id);
            match method {
                GenerateMethod::Neva { .. } => Ok((
                    generate_scanpath(attn.as_ref().expect("loaded above"), id, s, t, &cfg.foveation)?,
                    false,
                )),
                GenerateMethod::Baseline { baseline } => match baseline {
                    BaselineName::Random => Ok((random_scanpath(id, t, seed)?, false)),
                    BaselineName::Center => Ok((center_scanpath(id, t, cfg.baselines.sigma_center, seed)?, false)),
                    BaselineName::Wta => {
                        let out = wta_scanpath(&saliency_itti_lite(s), id, t, cfg.baselines.ior_radius)?;
                        Ok((out.scanpath, out.center_fallback))
                    }
                },
            }
        })
        .collect::<neva_core::Result<Vec<_>>>()?;
    let fallbacks = results.iter().filter(|r| r.1).count();
    if fallbacks > 0 {
        log::warn!("{fallbacks} images had a flat saliency map; their WTA scanpaths sit at the center");
    }
    let rows: Vec<MethodScanpath> = results
        .into_iter()
        .zip(&images)
        .map(|((scanpath, _), (_, s))| MethodScanpath {
            method: name.to_string(),
            scanpath,
            image_size: (s.height(), s.width()),
        })
        .collect();
    ensure_out_dir(cfg)?;
    let file = scanpath_file_name(name);
    write_atomic(&cfg.out_dir.join(&file), |p| Ok(write_scanpaths(p, &rows)?))?;
    Ok(vec![PathBuf::from(file)])
}

fn evaluate_cmd(cfg: &ExperimentConfig, files: &[PathBuf], human: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    if files.is_empty() {
        return Err(CliError::usage("no scanpath files given"));
    }
    let mut methods: MethodScanpaths = BTreeMap::new();
    for f in files {
        for (method, by_image) in load_scanpaths(f)? {
            if methods.insert(method.clone(), by_image).is_some() {
                return Err(CliError::usage(format!("method {method} appears in more than one scanpath file")));
            }
        }
    }
    let eval = cfg.data.eval_manifest.as_deref().map(load_split).transpose()?;
    let records = match (human, &eval) {
        (Some(path), _) => {
            let sizes = eval.as_ref().map(|d| d.image_sizes()).unwrap_or_default();
            load_fixations_with_sizes(path, &sizes)?.records
        }
        (None, Some(ds)) => match &ds.fixations {
            Some(f) => f.records.clone(),
            None => return Err(CliError::usage("the evaluation dataset has no fixation_file; pass --human")),
        },
        (None, None) => return Err(CliError::usage("no human fixations: pass --human or set data.eval_manifest")),
    };
    let viewers = group_by_image(&records)?;
    let overlap = methods
        .values()
        .any(|by_image| by_image.keys().any(|id| viewers.contains_key(id)));
    if !overlap {
        return Err(CliError::data("no image id is shared by the scanpath files and the human fixations"));
    }
    let report = evaluate(&methods, &viewers, &cfg.evaluation())?;
    for e in &report.errors {
        log::warn!("{e}");
    }
    ensure_out_dir(cfg)?;
    let rows = cfg.out_dir.join("results_per_image.csv");
    write_rows_csv(&report, File::create(&rows)?)?;
    let summary = cfg.out_dir.join("results_summary.csv");
    write_summary_csv(&report, File::create(&summary)?)?;
    Ok(vec![PathBuf::from("results_per_image.csv"), PathBuf::from("results_summary.csv")])
}

fn plot(cfg: &ExperimentConfig, file: &Path, methods: &[String], image_ids: &[String]) -> CliResult<Vec<PathBuf>> {
    let all = load_scanpaths(file)?;
    for m in methods {
        if !all.contains_key(m) {
            return Err(CliError::usage(format!("method {m} is not in {}", file.display())));
        }
    }
    let ds = load_split(cfg.eval_manifest()?)?;
    let mut jobs = Vec::new();
    for (method, by_image) in &all {
        if !methods.is_empty() && !methods.contains(method) {
            continue;
        }
        for (id, sp) in by_image {
            if !image_ids.is_empty() && !image_ids.contains(id) {
                continue;
            }
            if sp.len() != cfg.scanpath_length {
                return Err(CliError::usage(format!(
                    "{method}/{id}: scanpath has {} fixations, config expects {}",
                    sp.len(),
                    cfg.scanpath_length
                )));
            }
            let s = ds
                .images
                .get(id)
                .ok_or_else(|| CliError::data(format!("image {id} is not in the evaluation dataset")))?;
            jobs.push((method, id, sp, s));
        }
    }
    for id in image_ids {
        if !jobs.iter().any(|j| j.1 == id) {
            return Err(CliError::usage(format!("no scanpath for image {id}")));
        }
    }
    let dir = cfg.out_dir.join("plots");
    std::fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    for (method, id, sp, s) in jobs {
        let panels = render_panels(s, sp, &cfg.foveation, cfg.plot.scale)?;
        for (panel, img) in PANELS.iter().zip(panels) {
            let rel = PathBuf::from("plots").join(format!("{id}_{method}_{panel}.png"));
            img.save(cfg.out_dir.join(&rel)).map_err(neva_core::NevaError::from)?;
            outputs.push(rel);
        }
    }
    Ok(outputs)
}
