//! Downstream task models whose loss drives the attention network: an image
//! classifier and a denoising autoencoder behind one interface.
//!
//! Stimuli whose spatial size differs from the model input are resized
//! bilinearly before the forward pass; the loss gradient is mapped back
//! through the same resize.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NevaError, Result};
use crate::nn::{
    mse, resize_bilinear, resize_bilinear_adjoint, softmax, softmax_cross_entropy, Adam, AdamConfig,
    AutoencoderConfig, ConvNetConfig, Network, NetworkRecord, ParamGrads,
};
use crate::types::Stimulus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Reconstruction,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Classification => "classification",
            TaskKind::Reconstruction => "reconstruction",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    /// Reconstruction target: the original sharp image.
    Image(Stimulus),
}

impl Target {
    pub fn kind(&self) -> TaskKind {
        match self {
            Target::Class(_) => TaskKind::Classification,
            Target::Image(_) => TaskKind::Reconstruction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStimulus {
    pub stimulus: Stimulus,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Model input `[height, width]`; stimuli are resized to it.
    pub input_size: [usize; 2],
    pub classifier: ConvNetConfig,
    pub autoencoder: AutoencoderConfig,
    /// Std of the additive Gaussian corruption used for denoising training.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for TaskTrainConfig {
    fn default() -> Self {
        TaskTrainConfig {
            epochs: 20,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            input_size: [32, 32],
            classifier: ConvNetConfig {
                conv_channels: vec![8, 16, 16],
                conv_strides: vec![1, 2, 2],
                hidden: vec![32],
                global_pool: true,
            },
            autoencoder: AutoencoderConfig::default(),
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl TaskTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NevaError::invalid("epochs and batch_size must be at least 1"));
        }
        if self.input_size.iter().any(|&s| s < crate::types::MIN_SIDE) {
            return Err(NevaError::invalid("task input size must be at least 8x8"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(NevaError::invalid("noise_std must be non-negative"));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(NevaError::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Mean loss per epoch, in training order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
}

/// A frozen differentiable model `image -> prediction` with a task loss.
#[derive(Debug, Clone)]
pub struct TaskModel {
    kind: TaskKind,
    class_count: Option<usize>,
    network: Network,
    forward_calls: Arc<AtomicUsize>,
}

#[derive(Serialize, Deserialize)]
struct TaskCheckpoint {
    format: String,
    version: u32,
    kind: TaskKind,
    class_count: Option<usize>,
    network: NetworkRecord,
}

const CHECKPOINT_FORMAT: &str = "neva-task-model";

impl TaskModel {
    pub fn new_classifier(network: Network, class_count: usize) -> Result<Self> {
        if network.output_shape() != (class_count, 1, 1) {
            return Err(NevaError::invalid("classifier output must have one logit per class"));
        }
        Ok(TaskModel {
            kind: TaskKind::Classification,
            class_count: Some(class_count),
            network,
            forward_calls: Arc::default(),
        })
    }

    pub fn new_reconstructor(network: Network) -> Result<Self> {
        if network.output_shape() != network.input_shape() {
            return Err(NevaError::invalid("reconstructor output must match its input shape"));
        }
        Ok(TaskModel {
            kind: TaskKind::Reconstruction,
            class_count: None,
            network,
            forward_calls: Arc::default(),
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn class_count(&self) -> Option<usize> {
        self.class_count
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Number of forward evaluations since construction (shared by clones).
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Stimulus resized to the network input, channel-first.
    fn prepare(&self, image: &Stimulus) -> Result<Array3<f64>> {
        let (c, h, w) = self.network.input_shape();
        if image.channels() != c {
            return Err(NevaError::invalid(format!(
                "task model expects {c} channels, got {}",
                image.channels()
            )));
        }
        Ok(resize_bilinear(&image.to_chw(), h, w))
    }

    /// Raw network output: logits `(K, 1, 1)` or an image `(C, h, w)`.
    pub fn forward(&self, image: &Stimulus) -> Result<Array3<f64>> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        self.network.forward(&self.prepare(image)?)
    }

    pub fn predict_class(&self, image: &Stimulus) -> Result<usize> {
        if self.kind != TaskKind::Classification {
            return Err(NevaError::invalid("predict_class needs a classifier"));
        }
        let probs = softmax(&self.forward(image)?);
        Ok(argmax(&probs))
    }

    pub fn loss(&self, image: &Stimulus, target: &Target) -> Result<f64> {
        let out = self.forward(image)?;
        Ok(self.loss_and_output_grad(&out, target)?.0)
    }

    /// Loss and its gradient with respect to `image`, in `(height, width, channels)` layout.
    pub fn loss_with_input_grad(&self, image: &Stimulus, target: &Target) -> Result<(f64, Array3<f64>)> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let x = self.prepare(image)?;
        let (out, tape) = self.network.forward_tape(&x)?;
        let (loss, g_out) = self.loss_and_output_grad(&out, target)?;
        let g_in = self.network.backward(tape, g_out, None);
        let g_full = resize_bilinear_adjoint(&g_in, image.height(), image.width());
        Ok((loss, g_full.permuted_axes([1, 2, 0]).as_standard_layout().into_owned()))
    }

    fn loss_and_output_grad(&self, out: &Array3<f64>, target: &Target) -> Result<(f64, Array3<f64>)> {
        match (self.kind, target) {
            (TaskKind::Classification, Target::Class(c)) => {
                let k = self.class_count.expect("classifier has a class count");
                if *c >= k {
                    return Err(NevaError::invalid(format!("class {c} outside [0, {k})")));
                }
                Ok(softmax_cross_entropy(out, *c))
            }
            (TaskKind::Reconstruction, Target::Image(t)) => {
                let (_, h, w) = self.network.input_shape();
                if t.channels() != out.dim().0 {
                    return Err(NevaError::invalid("reconstruction target channel mismatch"));
                }
                Ok(mse(out, &resize_bilinear(&t.to_chw(), h, w)))
            }
            (kind, t) => Err(NevaError::invalid(format!(
                "{} target given to a {kind} model",
                t.kind()
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = TaskCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            kind: self.kind,
            class_count: self.class_count,
            network: self.network.to_record(),
        };
        let file = std::fs::File::create(path).map_err(|e| NevaError::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| NevaError::io(path, e))?;
        let ckpt: TaskCheckpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NevaError::data(format!(
                "{} is not a task model checkpoint (format {:?})",
                path.display(),
                ckpt.format
            )));
        }
        let network = Network::from_record(&ckpt.network)?;
        match ckpt.kind {
            TaskKind::Classification => TaskModel::new_classifier(
                network,
                ckpt.class_count
                    .ok_or_else(|| NevaError::data("classifier checkpoint without class_count"))?,
            ),
            TaskKind::Reconstruction => TaskModel::new_reconstructor(network),
        }
    }
}

impl PartialEq for TaskModel {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.class_count == other.class_count && self.network == other.network
    }
}

/// Task loss of `model` on `image` against `target`.
pub fn task_loss(model: &TaskModel, image: &Stimulus, target: &Target) -> Result<f64> {
    model.loss(image, target)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn check_shapes<'a>(mut shapes: impl Iterator<Item = &'a Stimulus>) -> Result<(usize, usize, usize)> {
    let first = shapes
        .next()
        .ok_or_else(|| NevaError::invalid("training set is empty"))?
        .shape();
    if let Some(s) = shapes.find(|s| s.shape() != first) {
        return Err(NevaError::invalid(format!(
            "inconsistent stimulus shapes {first:?} and {:?}",
            s.shape()
        )));
    }
    Ok(first)
}

/// Loop settings shared by task and attention training.
pub(crate) struct FitSettings<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub label: &'a str,
}

/// Mini-batch Adam where `per_sample(network, index, epoch, draw)` returns one
/// sample's loss and parameter gradient.
///
/// `draw` is a per-sample seed for any stochastic corruption. Gradients are
/// summed in sample order, so the result is independent of the thread pool.
pub(crate) fn fit<F>(network: &mut Network, n: usize, settings: &FitSettings<'_>, per_sample: F) -> TrainingLog
where
    F: Fn(&Network, usize, usize, u64) -> (f64, ParamGrads) + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut adam = Adam::new(network, settings.optimizer);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(settings.batch_size).enumerate() {
            let base = ((epoch as u64) << 40) ^ ((b as u64) << 20);
            let net = &*network;
            let results: Vec<(f64, ParamGrads)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| per_sample(net, i, epoch, settings.seed ^ base ^ k as u64))
                .collect();
            let mut grads = ParamGrads::sum(&network.zero_grads(), results.iter().map(|r| &r.1));
            grads.scale(1.0 / batch.len() as f64);
            epoch_loss += results.iter().map(|r| r.0).sum::<f64>();
            adam.step(network, &grads);
        }
        let mean = epoch_loss / n as f64;
        log::info!("{} epoch {epoch}: mean loss {mean:.5}", settings.label);
        log.epoch_losses.push(mean);
    }
    log
}

impl TaskTrainConfig {
    fn fit_settings(&self) -> FitSettings<'static> {
        FitSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed: self.seed,
            label: "task",
        }
    }
}

/// Trains a convolutional classifier on class-labelled stimuli.
pub fn train_classifier(train_set: &[LabeledStimulus], cfg: &TaskTrainConfig) -> Result<(TaskModel, TrainingLog)> {
    cfg.validate()?;
    let (_, _, c) = check_shapes(train_set.iter().map(|s| &s.stimulus))?;
    let mut labels = Vec::with_capacity(train_set.len());
    for item in train_set {
        match item.target {
            Target::Class(k) => labels.push(k),
            Target::Image(_) => return Err(NevaError::invalid("classifier training needs class labels")),
        }
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; class_count];
        labels.iter().for_each(|&k| seen[k] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(NevaError::invalid("classifier training needs at least two distinct classes"));
    }
    let [h, w] = cfg.input_size;
    let specs = cfg.classifier.layers((c, h, w), class_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut network = Network::new((c, h, w), &specs, &mut rng)?;
    let inputs: Vec<Array3<f64>> = train_set
        .iter()
        .map(|s| resize_bilinear(&s.stimulus.to_chw(), h, w))
        .collect();
    let log = fit(&mut network, train_set.len(), &cfg.fit_settings(), |net, i, _, _| {
        let (out, tape) = net.forward_tape(&inputs[i]).expect("shape checked");
        let (loss, g) = softmax_cross_entropy(&out, labels[i]);
        let mut grads = net.zero_grads();
        net.backward(tape, g, Some(&mut grads));
        (loss, grads)
    });
    Ok((TaskModel::new_classifier(network, class_count)?, log))
}

/// Trains a denoising autoencoder: corrupted input, clean target.
pub fn train_reconstructor(train_set: &[Stimulus], cfg: &TaskTrainConfig) -> Result<(TaskModel, TrainingLog)> {
    cfg.validate()?;
    let (_, _, c) = check_shapes(train_set.iter())?;
    let [h, w] = cfg.input_size;
    let specs = cfg.autoencoder.layers((c, h, w))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xAE));
    let mut network = Network::new((c, h, w), &specs, &mut rng)?;
    let clean: Vec<Array3<f64>> = train_set
        .iter()
        .map(|s| resize_bilinear(&s.to_chw(), h, w))
        .collect();
    let noise_std = cfg.noise_std;
    let log = fit(&mut network, train_set.len(), &cfg.fit_settings(), |net, i, _, draw| {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(draw);
        let target = &clean[i];
        let input = if noise_std > 0.0 {
            let normal = Normal::new(0.0, noise_std).expect("finite std");
            target.mapv(|v| (v + normal.sample(&mut noise_rng)).clamp(0.0, 1.0))
        } else {
            target.clone()
        };
        let (out, tape) = net.forward_tape(&input).expect("shape checked");
        let (loss, g) = mse(&out, target);
        let mut grads = net.zero_grads();
        net.backward(tape, g, Some(&mut grads));
        (loss, grads)
    });
    Ok((TaskModel::new_reconstructor(network)?, log))
}

/// Fraction of correctly classified items.
pub fn accuracy(model: &TaskModel, items: &[LabeledStimulus]) -> Result<f64> {
    if items.is_empty() {
        return Err(NevaError::invalid("accuracy of an empty set"));
    }
    let correct = items
        .par_iter()
        .map(|item| match item.target {
            Target::Class(k) => model.predict_class(&item.stimulus).map(|p| usize::from(p == k)),
            Target::Image(_) => Err(NevaError::invalid("accuracy needs class labels")),
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / items.len() as f64)
}

/// Mean task loss over a set.
pub fn mean_loss(model: &TaskModel, items: &[LabeledStimulus]) -> Result<f64> {
    if items.is_empty() {
        return Err(NevaError::invalid("mean loss of an empty set"));
    }
    let losses = items
        .par_iter()
        .map(|item| model.loss(&item.stimulus, &item.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use rand::Rng;

    fn random_stimulus(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Stimulus {
        Stimulus::from_fn(h, w, c, |_| rng.random::<f64>()).unwrap()
    }

    fn tiny_classifier(seed: u64) -> TaskModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ConvNetConfig {
            conv_channels: vec![4, 4],
            conv_strides: vec![1, 2],
            hidden: vec![8],
            global_pool: true,
        };
        let net = Network::new((3, 8, 8), &cfg.layers((3, 8, 8), 3).unwrap(), &mut rng).unwrap();
        TaskModel::new_classifier(net, 3).unwrap()
    }

    #[test]
    fn uniform_prediction_costs_log_k() {
        // A single dense layer with zero weights predicts uniformly.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new((1, 8, 8), &[LayerSpec::Dense { inputs: 64, outputs: 4 }], &mut rng).unwrap();
        net.scale_output_layer(0.0);
        let model = TaskModel::new_classifier(net, 4).unwrap();
        let img = Stimulus::constant(8, 8, 1, 0.3).unwrap();
        let loss = task_loss(&model, &img, &Target::Class(1)).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kind_mismatch_and_bad_class_are_rejected() {
        let model = tiny_classifier(1);
        let img = Stimulus::constant(8, 8, 3, 0.3).unwrap();
        assert!(task_loss(&model, &img, &Target::Image(img.clone())).is_err());
        assert!(task_loss(&model, &img, &Target::Class(3)).is_err());
        let gray = Stimulus::constant(8, 8, 1, 0.3).unwrap();
        assert!(task_loss(&model, &gray, &Target::Class(0)).is_err());
    }

    #[test]
    fn reconstruction_loss_is_zero_for_perfect_output() {
        // MSE of an output equal to its target.
        let a = Stimulus::constant(8, 8, 3, 0.25).unwrap().to_chw();
        assert_eq!(mse(&a, &a).0, 0.0);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = tiny_classifier(3);
        // Larger stimulus exercises the resize bridge.
        let img = random_stimulus(&mut rng, 12, 10, 3);
        let target = Target::Class(2);
        let (_, grad) = model.loss_with_input_grad(&img, &target).unwrap();
        let h = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                let c = (i + j) % 3;
                let mut p = img.pixels().clone();
                p[[i, j, c]] += h;
                let mut m = img.pixels().clone();
                m[[i, j, c]] -= h;
                let lp = model.loss(&Stimulus::from_valid(p.mapv(|v| v.clamp(0.0, 1.0))), &target).unwrap();
                let lm = model.loss(&Stimulus::from_valid(m.mapv(|v| v.clamp(0.0, 1.0))), &target).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                num += (fd - grad[[i, j, c]]).powi(2);
                den += fd.powi(2);
            }
        }
        assert!((num / den).sqrt() < 1e-2);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = tiny_classifier(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.json");
        model.save(&path).unwrap();
        let back = TaskModel::load(&path).unwrap();
        assert_eq!(back, model);
        let img = random_stimulus(&mut rng, 8, 8, 3);
        assert_eq!(back.forward(&img).unwrap(), model.forward(&img).unwrap());
    }

    #[test]
    fn training_rejects_degenerate_sets() {
        let cfg = TaskTrainConfig { epochs: 1, ..Default::default() };
        assert!(train_classifier(&[], &cfg).is_err());
        let img = Stimulus::constant(32, 32, 3, 0.5).unwrap();
        let single: Vec<_> = (0..4)
            .map(|_| LabeledStimulus { stimulus: img.clone(), target: Target::Class(1) })
            .collect();
        assert!(train_classifier(&single, &cfg).is_err());
        let mixed = vec![
            LabeledStimulus { stimulus: img.clone(), target: Target::Class(0) },
            LabeledStimulus { stimulus: Stimulus::constant(16, 16, 3, 0.5).unwrap(), target: Target::Class(1) },
        ];
        assert!(train_classifier(&mixed, &cfg).is_err());
        assert!(train_reconstructor(&[], &cfg).is_err());
    }

    #[test]
    fn untrained_reconstructor_has_finite_positive_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let specs = AutoencoderConfig::default().layers((3, 32, 32)).unwrap();
        let model = TaskModel::new_reconstructor(Network::new((3, 32, 32), &specs, &mut rng).unwrap()).unwrap();
        let img = random_stimulus(&mut rng, 32, 32, 3);
        let loss = task_loss(&model, &img, &Target::Image(img.clone())).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }
}
