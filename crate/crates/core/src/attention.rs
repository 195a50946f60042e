//! The trainable attention network: perceived image in, next fixation out.
//!
//! Training rolls the perceptual memory forward and backpropagates the frozen
//! task model's loss into the attention weights through the Gaussian blob's
//! dependence on the fixation.

use std::path::Path;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NevaError, Result};
use crate::foveation::{
    fixation_vjp, gaussian_blob, gaussian_blob_vjp, init_state, update_state, FoveationConfig, PerceptualState,
};
use crate::nn::{resize_bilinear, resize_bilinear_adjoint, AdamConfig, ConvNetConfig, Network, NetworkRecord, ParamGrads};
use crate::tasks::{fit, FitSettings, LabeledStimulus, TaskModel, Target, TrainingLog};
use crate::types::{Fixation, Scanpath, Stimulus};

/// Architecture of the attention network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    /// Network input `[height, width]`; perceived images are resized to it.
    pub input_size: [usize; 2],
    pub channels: usize,
    pub backbone: ConvNetConfig,
    /// Scale applied to the initial output-layer weights. Small values start
    /// every fixation near the image center.
    pub output_init_scale: f64,
    pub seed: u64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            input_size: [32, 32],
            channels: 3,
            backbone: ConvNetConfig {
                conv_channels: vec![8, 16],
                conv_strides: vec![2, 2],
                hidden: vec![32],
                global_pool: false,
            },
            output_init_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    config: AttentionConfig,
    network: Network,
}

#[derive(Serialize, Deserialize)]
struct AttentionCheckpoint {
    format: String,
    version: u32,
    config: AttentionConfig,
    network: NetworkRecord,
}

const CHECKPOINT_FORMAT: &str = "neva-attention-model";

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Maps the two network outputs to a fixation; also returns `d xi / d z`.
fn squash(z: &Array3<f64>) -> (Fixation, [f64; 2]) {
    let x = sigmoid(z[[0, 0, 0]]);
    let y = sigmoid(z[[1, 0, 0]]);
    (Fixation { x, y }, [x * (1.0 - x), y * (1.0 - y)])
}

fn to_hwc(chw: Array3<f64>) -> Array3<f64> {
    chw.permuted_axes([1, 2, 0]).as_standard_layout().into_owned()
}

impl AttentionModel {
    pub fn new(config: AttentionConfig) -> Result<Self> {
        let [h, w] = config.input_size;
        if h < crate::types::MIN_SIDE || w < crate::types::MIN_SIDE {
            return Err(NevaError::invalid("attention input must be at least 8x8"));
        }
        if config.channels != 1 && config.channels != 3 {
            return Err(NevaError::invalid("attention channels must be 1 or 3"));
        }
        let input = (config.channels, h, w);
        let specs = config.backbone.layers(input, 2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut network = Network::new(input, &specs, &mut rng)?;
        network.scale_output_layer(config.output_init_scale);
        Ok(AttentionModel { config, network })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    fn check_channels(&self, s: &Stimulus) -> Result<()> {
        if s.channels() != self.config.channels {
            return Err(NevaError::invalid(format!(
                "attention model expects {} channels, got {}",
                self.config.channels,
                s.channels()
            )));
        }
        Ok(())
    }

    fn model_input(&self, perceived: &Stimulus) -> Array3<f64> {
        let [h, w] = self.config.input_size;
        let chw = perceived.to_chw();
        if (perceived.height(), perceived.width()) == (h, w) {
            chw
        } else {
            resize_bilinear(&chw, h, w)
        }
    }

    /// Next fixation for a perceived image of exactly the configured shape.
    pub fn next_fixation(&self, perceived: &Stimulus) -> Result<Fixation> {
        let [h, w] = self.config.input_size;
        if perceived.shape() != (h, w, self.config.channels) {
            return Err(NevaError::invalid(format!(
                "attention model expects {:?}, got {:?}",
                (h, w, self.config.channels),
                perceived.shape()
            )));
        }
        self.propose(perceived)
    }

    /// Like [`next_fixation`](Self::next_fixation) but resizes other resolutions first.
    fn propose(&self, perceived: &Stimulus) -> Result<Fixation> {
        self.check_channels(perceived)?;
        Ok(squash(&self.network.forward(&self.model_input(perceived))?).0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = AttentionCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            config: self.config.clone(),
            network: self.network.to_record(),
        };
        let file = std::fs::File::create(path).map_err(|e| NevaError::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| NevaError::io(path, e))?;
        let ckpt: AttentionCheckpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NevaError::data(format!(
                "{} is not an attention checkpoint (format {:?})",
                path.display(),
                ckpt.format
            )));
        }
        let network = Network::from_record(&ckpt.network)?;
        let [h, w] = ckpt.config.input_size;
        if network.input_shape() != (ckpt.config.channels, h, w) || network.output_shape() != (2, 1, 1) {
            return Err(NevaError::data("attention checkpoint does not match its config"));
        }
        Ok(AttentionModel {
            config: ckpt.config,
            network,
        })
    }
}

/// One rollout step: the fixation chosen and the memory after applying it.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub fixation: Fixation,
    pub state: PerceptualState,
}

/// Runs the attention loop for `steps` fixations from the fully coarse image.
pub fn rollout(attn: &AttentionModel, s: &Stimulus, steps: usize, cfg: &FoveationConfig) -> Result<Vec<RolloutStep>> {
    if steps == 0 {
        return Err(NevaError::invalid("scanpath length must be at least 1"));
    }
    attn.check_channels(s)?;
    let mut state = init_state(s, cfg)?;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let fixation = attn.propose(state.perceived())?;
        state = update_state(&state, fixation);
        out.push(RolloutStep {
            fixation,
            state: state.clone(),
        });
    }
    Ok(out)
}

/// Scanpath of `steps` fixations; the task model plays no part.
pub fn generate_scanpath(
    attn: &AttentionModel,
    stimulus_id: &str,
    s: &Stimulus,
    steps: usize,
    cfg: &FoveationConfig,
) -> Result<Scanpath> {
    let fixations = rollout(attn, s, steps, cfg)?.into_iter().map(|r| r.fixation).collect();
    Scanpath::new(stimulus_id, fixations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NevaTrainConfig {
    /// Fixations per training rollout.
    pub horizon: usize,
    /// Steps through which each per-step loss is backpropagated; 1 is greedy.
    pub unroll_depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub foveation: FoveationConfig,
    /// Fovea width multiplier for the first epoch, decaying linearly to 1 over
    /// `fovea_warmup_epochs`. A wide early fovea gives objects far from the
    /// current fixation a usable gradient. Generation always uses `foveation`.
    pub fovea_warmup: f64,
    /// 0 disables the warm-up.
    pub fovea_warmup_epochs: usize,
    pub seed: u64,
}

impl Default for NevaTrainConfig {
    fn default() -> Self {
        NevaTrainConfig {
            horizon: 5,
            unroll_depth: 1,
            epochs: 6,
            batch_size: 16,
            optimizer: AdamConfig {
                learning_rate: 5e-3,
                ..AdamConfig::default()
            },
            foveation: FoveationConfig::default(),
            fovea_warmup: 3.0,
            fovea_warmup_epochs: 3,
            seed: 0,
        }
    }
}

impl NevaTrainConfig {
    /// Foveation used for the rollouts of `epoch`.
    pub fn foveation_at(&self, epoch: usize) -> FoveationConfig {
        let w = self.fovea_warmup_epochs;
        if epoch >= w {
            return self.foveation;
        }
        let factor = 1.0 + (self.fovea_warmup - 1.0) * (1.0 - epoch as f64 / w as f64);
        FoveationConfig {
            sigma_fovea: self.foveation.sigma_fovea * factor,
            ..self.foveation
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(NevaError::invalid("horizon must be at least 1"));
        }
        if self.unroll_depth == 0 || self.unroll_depth > self.horizon {
            return Err(NevaError::invalid("unroll_depth must lie in [1, horizon]"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NevaError::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(NevaError::invalid("learning rate must be positive"));
        }
        if !(self.fovea_warmup >= 1.0 && self.fovea_warmup.is_finite()) {
            return Err(NevaError::invalid("fovea_warmup must be a finite factor >= 1"));
        }
        self.foveation.validate()
    }
}

/// Trains `attn` against the frozen `task`; the task model is never updated.
pub fn train_attention(
    attn: AttentionModel,
    task: &TaskModel,
    train_set: &[LabeledStimulus],
    cfg: &NevaTrainConfig,
) -> Result<(AttentionModel, TrainingLog)> {
    if let Some(item) = train_set.iter().find(|i| i.target.kind() != task.kind()) {
        return Err(NevaError::invalid(format!(
            "{} target given to a {} task model",
            item.target.kind(),
            task.kind()
        )));
    }
    train_attention_with_loss(attn, train_set, cfg, |img, target| task.loss_with_input_grad(img, target))
}

/// Training loop with an arbitrary differentiable loss on the perceived image.
///
/// `loss` returns the loss and its gradient with respect to the perceived
/// image in `(height, width, channels)` layout.
pub fn train_attention_with_loss<L>(
    mut attn: AttentionModel,
    train_set: &[LabeledStimulus],
    cfg: &NevaTrainConfig,
    loss: L,
) -> Result<(AttentionModel, TrainingLog)>
where
    L: Fn(&Stimulus, &Target) -> Result<(f64, Array3<f64>)> + Sync,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NevaError::invalid("training set is empty"));
    }
    for item in train_set {
        attn.check_channels(&item.stimulus)?;
    }
    // Surface loss errors before training rather than inside the worker pool.
    let probe = init_state(&train_set[0].stimulus, &cfg.foveation)?;
    loss(probe.perceived(), &train_set[0].target)?;

    let settings = FitSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer,
        seed: cfg.seed,
        label: "attention",
    };
    let template = attn.clone();
    let per_epoch: Vec<NevaTrainConfig> = (0..cfg.epochs)
        .map(|e| NevaTrainConfig {
            foveation: cfg.foveation_at(e),
            ..cfg.clone()
        })
        .collect();
    let log = fit(&mut attn.network, train_set.len(), &settings, |net, i, epoch, _| {
        rollout_gradient(&template.config, net, &train_set[i], &per_epoch[epoch], &loss)
            .expect("inputs were validated before training")
    });
    Ok((attn, log))
}

/// Per-step losses of one rollout, summed and divided by the horizon, with
/// the truncated gradient with respect to the attention parameters.
fn rollout_gradient<L>(
    config: &AttentionConfig,
    net: &Network,
    item: &LabeledStimulus,
    cfg: &NevaTrainConfig,
    loss: &L,
) -> Result<(f64, ParamGrads)>
where
    L: Fn(&Stimulus, &Target) -> Result<(f64, Array3<f64>)>,
{
    let horizon = cfg.horizon;
    let sigma = cfg.foveation.sigma_fovea;
    let gamma = cfg.foveation.gamma;
    let (sh, sw, _) = item.stimulus.shape();
    let [h, w] = config.input_size;
    let input = |p: &Stimulus| {
        let chw = p.to_chw();
        if (sh, sw) == (h, w) {
            chw
        } else {
            resize_bilinear(&chw, h, w)
        }
    };

    // states[t] is the memory after t fixations; tapes[t] produced fixation t + 1.
    let mut states = vec![init_state(&item.stimulus, &cfg.foveation)?];
    let mut tapes = Vec::with_capacity(horizon);
    let mut fixations = Vec::with_capacity(horizon);
    let mut squash_grads = Vec::with_capacity(horizon);
    let mut perceived_grads = Vec::with_capacity(horizon);
    let mut total = 0.0;
    for t in 0..horizon {
        let (z, tape) = net.forward_tape(&input(states[t].perceived()))?;
        let (xi, dz) = squash(&z);
        let next = update_state(&states[t], xi);
        let (l, g) = loss(next.perceived(), &item.target)?;
        total += l;
        tapes.push(tape);
        fixations.push(xi);
        squash_grads.push(dz);
        perceived_grads.push(g);
        states.push(next);
    }

    let mut grads = net.zero_grads();
    let scale = 1.0 / horizon as f64;
    for t in 1..=horizon {
        let mut g_acc = states[t].accumulator_vjp(&perceived_grads[t - 1]) * scale;
        let lowest = (t + 1).saturating_sub(cfg.unroll_depth).max(1);
        for j in (lowest..=t).rev() {
            let xi = fixations[j - 1];
            let blob = gaussian_blob(sh, sw, xi, sigma);
            let [gx, gy] = gaussian_blob_vjp(&blob, xi, sigma, &g_acc);
            let dz = squash_grads[j - 1];
            let g_z = Array3::from_shape_vec((2, 1, 1), vec![gx * dz[0], gy * dz[1]]).expect("two outputs");
            let g_in = net.backward(tapes[j - 1].clone(), g_z, Some(&mut grads));
            if j == lowest {
                break;
            }
            // Step into the memory that produced fixation j.
            let g_h = to_hwc(if (sh, sw) == (h, w) {
                g_in
            } else {
                resize_bilinear_adjoint(&g_in, sh, sw)
            });
            g_acc = g_acc * gamma + states[j - 1].accumulator_vjp(&g_h);
        }
    }
    Ok((total * scale, grads))
}

/// Task loss and its gradient with respect to the fixation `xi` applied to `state`.
pub fn fixation_loss_gradient(
    task: &TaskModel,
    state: &PerceptualState,
    xi: Fixation,
    target: &Target,
) -> Result<(f64, [f64; 2])> {
    let next = update_state(state, xi);
    let (loss, g) = task.loss_with_input_grad(next.perceived(), target)?;
    Ok((loss, fixation_vjp(&next, xi, &g)))
}

/// Task loss on the memory left by applying `fixations` to a fresh state.
pub fn loss_after_fixations(
    task: &TaskModel,
    item: &LabeledStimulus,
    fixations: &[Fixation],
    cfg: &FoveationConfig,
) -> Result<f64> {
    let mut state = init_state(&item.stimulus, cfg)?;
    for &xi in fixations {
        state = update_state(&state, xi);
    }
    task.loss(state.perceived(), &item.target)
}

/// Mean task loss over `items` after `steps` attention-chosen fixations.
pub fn mean_loss_after_rollout(
    attn: &AttentionModel,
    task: &TaskModel,
    items: &[LabeledStimulus],
    steps: usize,
    cfg: &FoveationConfig,
) -> Result<f64> {
    if items.is_empty() {
        return Err(NevaError::invalid("no items to evaluate"));
    }
    let losses = items
        .par_iter()
        .map(|item| {
            let path = rollout(attn, &item.stimulus, steps, cfg)?;
            let last = &path.last().expect("steps >= 1").state;
            task.loss(last.perceived(), &item.target)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / items.len() as f64)
}
