//! Small feed-forward networks with explicit reverse-mode gradients.
//!
//! Everything runs in `f64` on single samples laid out `(channels, height, width)`;
//! dense layers flatten their input in row-major order and emit `(n, 1, 1)`.
//! Batches are processed sample-by-sample and gradients are summed in sample
//! order, so results do not depend on thread scheduling.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NevaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
    /// Nearest-neighbour 2x upsampling.
    Upsample2,
    /// Per-channel maximum over all positions.
    GlobalMaxPool,
}

impl LayerSpec {
    fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if c != in_channels {
                    return Err(NevaError::invalid(format!(
                        "conv expects {in_channels} channels, got {c}"
                    )));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel || stride == 0 {
                    return Err(NevaError::invalid("conv kernel does not fit the input"));
                }
                Ok((
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ))
            }
            LayerSpec::Dense { inputs, outputs } => {
                if c * h * w != inputs {
                    return Err(NevaError::invalid(format!(
                        "dense expects {inputs} inputs, got {}",
                        c * h * w
                    )));
                }
                Ok((outputs, 1, 1))
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok((c, h, w)),
            LayerSpec::Upsample2 => Ok((c, 2 * h, 2 * w)),
            LayerSpec::GlobalMaxPool => Ok((c, 1, 1)),
        }
    }

    fn param_shapes(&self) -> Option<((usize, usize), usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(((out_channels, in_channels * kernel * kernel), out_channels)),
            LayerSpec::Dense { inputs, outputs } => Some(((outputs, inputs), outputs)),
            _ => None,
        }
    }
}

/// Weight matrix and bias of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Params {
    fn zeros_like(&self) -> Params {
        Params {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    params: Option<Params>,
}

/// Per-layer gradient (or optimizer moment) buffers mirroring a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    layers: Vec<Option<Params>>,
}

impl ParamGrads {
    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weight += &b.weight;
                a.bias += &b.bias;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for p in self.layers.iter_mut().flatten() {
            p.weight *= factor;
            p.bias *= factor;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|p| p.weight.iter().chain(p.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Sums a sequence of gradients in iteration order.
    pub fn sum<'a>(template: &ParamGrads, items: impl IntoIterator<Item = &'a ParamGrads>) -> ParamGrads {
        let mut total = template.zeroed();
        for g in items {
            total.add_assign(g);
        }
        total
    }

    pub fn zeroed(&self) -> ParamGrads {
        ParamGrads {
            layers: self
                .layers
                .iter()
                .map(|p| p.as_ref().map(Params::zeros_like))
                .collect(),
        }
    }
}

/// Values cached by the forward pass for the backward pass.
#[derive(Debug, Clone)]
enum Cache {
    Conv {
        cols: Array2<f64>,
        in_shape: (usize, usize, usize),
        out_hw: (usize, usize),
    },
    Dense {
        input: Array1<f64>,
        in_shape: (usize, usize, usize),
    },
    Relu {
        output: Array3<f64>,
    },
    Sigmoid {
        output: Array3<f64>,
    },
    Upsample,
    MaxPool {
        in_shape: (usize, usize, usize),
        argmax: Vec<(usize, usize)>,
    },
}

/// Recorded forward pass of one sample.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// A sequential stack of layers with a fixed input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: (usize, usize, usize),
    output_shape: (usize, usize, usize),
    layers: Vec<Layer>,
}

fn im2col(
    x: &Array3<f64>,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (oh, ow) = out_hw;
    let mut cols = Array2::zeros((c * kernel * kernel, oh * ow));
    for ch in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ch * kernel + ki) * kernel + kj;
                let mut dst = cols.row_mut(row);
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - padding as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - padding as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        dst[oi * ow + oj] = x[[ch, ii as usize, jj as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    cols: &Array2<f64>,
    in_shape: (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
) -> Array3<f64> {
    let (c, h, w) = in_shape;
    let (oh, ow) = out_hw;
    let mut x = Array3::zeros((c, h, w));
    for ch in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = cols.row((ch * kernel + ki) * kernel + kj);
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - padding as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - padding as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        x[[ch, ii as usize, jj as usize]] += row[oi * ow + oj];
                    }
                }
            }
        }
    }
    x
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Network {
    /// Builds a network with He-normal weights and zero biases.
    pub fn new<R: Rng + ?Sized>(
        input_shape: (usize, usize, usize),
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let mut shape = input_shape;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            shape = spec.output_shape(shape)?;
            let params = spec.param_shapes().map(|((rows, cols), nb)| {
                let std = (2.0 / cols as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                Params {
                    weight: Array2::from_shape_fn((rows, cols), |_| normal.sample(rng)),
                    bias: Array1::zeros(nb),
                }
            });
            layers.push(Layer { spec: *spec, params });
        }
        Ok(Network {
            input_shape,
            output_shape: shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.output_shape
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params.as_ref())
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Multiplies the weights of the last parametric layer by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(p) = self.layers.iter_mut().rev().find_map(|l| l.params.as_mut()) {
            p.weight *= factor;
        }
    }

    /// Adds `delta` to every parameter.
    pub fn apply_delta(&mut self, delta: &ParamGrads) {
        for (p, d) in self.params_mut().zip(delta.layers.iter().flatten()) {
            p.weight += &d.weight;
            p.bias += &d.bias;
        }
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            layers: self
                .layers
                .iter()
                .map(|l| l.params.as_ref().map(Params::zeros_like))
                .collect(),
        }
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        if x.dim() != self.input_shape {
            return Err(NevaError::invalid(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn forward_tape(&self, x: &Array3<f64>) -> Result<(Array3<f64>, Tape)> {
        let (y, caches) = self.run(x, true)?;
        Ok((y, Tape { caches }))
    }

    fn run(&self, x: &Array3<f64>, record: bool) -> Result<(Array3<f64>, Vec<Cache>)> {
        self.check_input(x)?;
        let mut act = x.as_standard_layout().into_owned();
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        for layer in &self.layers {
            let (next, cache) = match (layer.spec, &layer.params) {
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        ..
                    },
                    Some(p),
                ) => {
                    let in_shape = act.dim();
                    let (_, oh, ow) = layer.spec.output_shape(in_shape)?;
                    let cols = im2col(&act, kernel, stride, padding, (oh, ow));
                    let mut out = p.weight.dot(&cols);
                    out += &p.bias.view().insert_axis(Axis(1));
                    let out = out
                        .into_shape_with_order((out_channels, oh, ow))
                        .expect("conv output shape");
                    (
                        out,
                        record.then_some(Cache::Conv {
                            cols,
                            in_shape,
                            out_hw: (oh, ow),
                        }),
                    )
                }
                (LayerSpec::Dense { outputs, .. }, Some(p)) => {
                    let in_shape = act.dim();
                    let input = Array1::from_iter(act.iter().copied());
                    let out = p.weight.dot(&input) + &p.bias;
                    let out = out.into_shape_with_order((outputs, 1, 1)).expect("dense output shape");
                    (out, record.then_some(Cache::Dense { input, in_shape }))
                }
                (LayerSpec::Relu, _) => {
                    let out = act.mapv(|v| v.max(0.0));
                    let cache = record.then(|| Cache::Relu {
                        output: out.clone(),
                    });
                    (out, cache)
                }
                (LayerSpec::Sigmoid, _) => {
                    let out = act.mapv(sigmoid);
                    let cache = record.then(|| Cache::Sigmoid {
                        output: out.clone(),
                    });
                    (out, cache)
                }
                (LayerSpec::Upsample2, _) => {
                    let (c, h, w) = act.dim();
                    let out = Array3::from_shape_fn((c, 2 * h, 2 * w), |(ch, i, j)| act[[ch, i / 2, j / 2]]);
                    (out, record.then_some(Cache::Upsample))
                }
                (LayerSpec::GlobalMaxPool, _) => {
                    let in_shape = act.dim();
                    let mut out = Array3::zeros((in_shape.0, 1, 1));
                    let mut argmax = Vec::with_capacity(in_shape.0);
                    for (ch, plane) in act.outer_iter().enumerate() {
                        let (pos, v) = plane
                            .indexed_iter()
                            .fold(((0, 0), f64::NEG_INFINITY), |b, (p, &v)| if v > b.1 { (p, v) } else { b });
                        out[[ch, 0, 0]] = v;
                        argmax.push(pos);
                    }
                    (out, record.then_some(Cache::MaxPool { in_shape, argmax }))
                }
                _ => unreachable!("parametric layer without parameters"),
            };
            act = next;
            if let Some(cache) = cache {
                caches.push(cache);
            }
        }
        Ok((act, caches))
    }

    /// Back-propagates `grad_out` through a recorded pass.
    ///
    /// Returns the gradient with respect to the network input. Parameter
    /// gradients are accumulated into `grads` when given; pass `None` for a
    /// frozen network.
    pub fn backward(&self, tape: Tape, grad_out: Array3<f64>, mut grads: Option<&mut ParamGrads>) -> Array3<f64> {
        let mut g = grad_out;
        for (idx, (layer, cache)) in self.layers.iter().zip(tape.caches).enumerate().rev() {
            g = match (layer.spec, cache) {
                (
                    LayerSpec::Conv2d {
                        kernel,
                        stride,
                        padding,
                        out_channels,
                        ..
                    },
                    Cache::Conv {
                        cols,
                        in_shape,
                        out_hw,
                    },
                ) => {
                    let p = layer.params.as_ref().expect("conv params");
                    let g2 = g
                        .into_shape_with_order((out_channels, out_hw.0 * out_hw.1))
                        .expect("conv grad shape");
                    if let Some(acc) = grads.as_deref_mut().and_then(|gr| gr.layers[idx].as_mut()) {
                        acc.weight += &g2.dot(&cols.t());
                        acc.bias += &g2.sum_axis(Axis(1));
                    }
                    let dcols = p.weight.t().dot(&g2);
                    col2im(&dcols, in_shape, kernel, stride, padding, out_hw)
                }
                (LayerSpec::Dense { .. }, Cache::Dense { input, in_shape }) => {
                    let p = layer.params.as_ref().expect("dense params");
                    let g1 = Array1::from_iter(g.iter().copied());
                    if let Some(acc) = grads.as_deref_mut().and_then(|gr| gr.layers[idx].as_mut()) {
                        let outer = g1
                            .view()
                            .insert_axis(Axis(1))
                            .dot(&input.view().insert_axis(Axis(0)));
                        acc.weight += &outer;
                        acc.bias += &g1;
                    }
                    p.weight
                        .t()
                        .dot(&g1)
                        .into_shape_with_order(in_shape)
                        .expect("dense input shape")
                }
                (LayerSpec::Relu, Cache::Relu { output }) => {
                    let mut g = g;
                    g.zip_mut_with(&output, |gv, &o| {
                        if o <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    g
                }
                (LayerSpec::Sigmoid, Cache::Sigmoid { output }) => {
                    let mut g = g;
                    g.zip_mut_with(&output, |gv, &o| *gv *= o * (1.0 - o));
                    g
                }
                (LayerSpec::Upsample2, Cache::Upsample) => {
                    let (c, h2, w2) = g.dim();
                    let mut out = Array3::zeros((c, h2 / 2, w2 / 2));
                    for ((ch, i, j), v) in g.indexed_iter() {
                        out[[ch, i / 2, j / 2]] += v;
                    }
                    out
                }
                (LayerSpec::GlobalMaxPool, Cache::MaxPool { in_shape, argmax }) => {
                    let mut out = Array3::zeros(in_shape);
                    for (ch, (i, j)) in argmax.into_iter().enumerate() {
                        out[[ch, i, j]] = g[[ch, 0, 0]];
                    }
                    out
                }
                _ => unreachable!("tape does not match network"),
            };
        }
        g
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Params> {
        self.layers.iter_mut().filter_map(|l| l.params.as_mut())
    }

    pub fn to_record(&self) -> NetworkRecord {
        NetworkRecord {
            input_shape: [self.input_shape.0, self.input_shape.1, self.input_shape.2],
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    spec: l.spec,
                    weight: l.params.as_ref().map(|p| p.weight.iter().copied().collect()),
                    bias: l.params.as_ref().map(|p| p.bias.to_vec()),
                })
                .collect(),
        }
    }

    pub fn from_record(record: &NetworkRecord) -> Result<Self> {
        let [c, h, w] = record.input_shape;
        let mut shape = (c, h, w);
        let mut layers = Vec::with_capacity(record.layers.len());
        for lr in &record.layers {
            shape = lr.spec.output_shape(shape)?;
            let params = match (lr.spec.param_shapes(), &lr.weight, &lr.bias) {
                (Some(((rows, cols), nb)), Some(wv), Some(bv)) => {
                    if wv.len() != rows * cols || bv.len() != nb {
                        return Err(NevaError::data("checkpoint weight count does not match architecture"));
                    }
                    Some(Params {
                        weight: Array2::from_shape_vec((rows, cols), wv.clone()).expect("checked length"),
                        bias: Array1::from_vec(bv.clone()),
                    })
                }
                (None, None, None) => None,
                _ => return Err(NevaError::data("checkpoint parameters do not match layer types")),
            };
            layers.push(Layer { spec: lr.spec, params });
        }
        Ok(Network {
            input_shape: (c, h, w),
            output_shape: shape,
            layers,
        })
    }
}

/// Serializable form of a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    #[serde(flatten)]
    pub spec: LayerSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weight: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bias: Option<Vec<f64>>,
}

/// Convolutional regressor/classifier layout: 3x3 convolutions, then dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvNetConfig {
    pub conv_channels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub hidden: Vec<usize>,
    /// Max-pool each feature map to one value before the dense layers,
    /// discarding position.
    pub global_pool: bool,
}

impl Default for ConvNetConfig {
    fn default() -> Self {
        ConvNetConfig {
            conv_channels: vec![16, 32, 32],
            conv_strides: vec![1, 2, 2],
            hidden: vec![64],
            global_pool: false,
        }
    }
}

impl ConvNetConfig {
    pub fn layers(&self, input: (usize, usize, usize), outputs: usize) -> Result<Vec<LayerSpec>> {
        if self.conv_channels.len() != self.conv_strides.len() {
            return Err(NevaError::invalid("conv_channels and conv_strides differ in length"));
        }
        let mut specs = Vec::new();
        let mut shape = input;
        for (&oc, &stride) in self.conv_channels.iter().zip(&self.conv_strides) {
            let spec = LayerSpec::Conv2d {
                in_channels: shape.0,
                out_channels: oc,
                kernel: 3,
                stride,
                padding: 1,
            };
            shape = spec.output_shape(shape)?;
            specs.push(spec);
            specs.push(LayerSpec::Relu);
        }
        if self.global_pool {
            specs.push(LayerSpec::GlobalMaxPool);
            shape = (shape.0, 1, 1);
        }
        let mut width = shape.0 * shape.1 * shape.2;
        for &hdim in &self.hidden {
            specs.push(LayerSpec::Dense {
                inputs: width,
                outputs: hdim,
            });
            specs.push(LayerSpec::Relu);
            width = hdim;
        }
        specs.push(LayerSpec::Dense {
            inputs: width,
            outputs,
        });
        Ok(specs)
    }
}

/// Encoder of stride-2 convolutions mirrored by upsampling convolutions, sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub channels: Vec<usize>,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            channels: vec![16, 32],
        }
    }
}

impl AutoencoderConfig {
    pub fn layers(&self, input: (usize, usize, usize)) -> Result<Vec<LayerSpec>> {
        let levels = self.channels.len();
        let divisor = 1usize << levels;
        if input.1 % divisor != 0 || input.2 % divisor != 0 {
            return Err(NevaError::invalid(format!(
                "autoencoder with {levels} levels needs sides divisible by {divisor}"
            )));
        }
        let conv = |i, o, stride| LayerSpec::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: 3,
            stride,
            padding: 1,
        };
        let mut specs = Vec::new();
        let mut c = input.0;
        for &oc in &self.channels {
            specs.push(conv(c, oc, 2));
            specs.push(LayerSpec::Relu);
            c = oc;
        }
        for &oc in self.channels.iter().rev().skip(1) {
            specs.push(LayerSpec::Upsample2);
            specs.push(conv(c, oc, 1));
            specs.push(LayerSpec::Relu);
            c = oc;
        }
        specs.push(LayerSpec::Upsample2);
        specs.push(conv(c, input.0, 1));
        specs.push(LayerSpec::Sigmoid);
        Ok(specs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: ParamGrads,
    v: ParamGrads,
}

impl Adam {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: net.zero_grads(),
            v: net.zero_grads(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &ParamGrads) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let moments = self.m.layers.iter_mut().flatten().zip(self.v.layers.iter_mut().flatten());
        let gs = grads.layers.iter().flatten();
        for ((p, (m, v)), g) in net.params_mut().zip(moments).zip(gs) {
            let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            };
            ndarray::Zip::from(&mut p.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Cross-entropy of softmax(logits) against `class`, with its gradient on the logits.
pub fn softmax_cross_entropy(logits: &Array3<f64>, class: usize) -> (f64, Array3<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let total = exps.sum();
    let log_z = total.ln() + max;
    let loss = log_z - logits.iter().nth(class).copied().expect("class index in range");
    let mut grad = exps / total;
    if let Some(g) = grad.iter_mut().nth(class) {
        *g -= 1.0;
    }
    (loss.max(0.0), grad)
}

pub fn softmax(logits: &Array3<f64>) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean squared error and its gradient on `pred`.
pub fn mse(pred: &Array3<f64>, target: &Array3<f64>) -> (f64, Array3<f64>) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// Source taps of a half-pixel-centred bilinear resample along one axis.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize of a `(channels, height, width)` array.
pub fn resize_bilinear(x: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    Array3::from_shape_fn((c, out_h, out_w), |(ch, i, j)| {
        let (y0, y1, fy) = ty[i];
        let (x0, x1, fx) = tx[j];
        let top = x[[ch, y0, x0]] * (1.0 - fx) + x[[ch, y0, x1]] * fx;
        let bottom = x[[ch, y1, x0]] * (1.0 - fx) + x[[ch, y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Transpose of [`resize_bilinear`]: maps an output-space gradient back to the input grid.
pub fn resize_bilinear_adjoint(g: &Array3<f64>, in_h: usize, in_w: usize) -> Array3<f64> {
    let (c, out_h, out_w) = g.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return g.clone();
    }
    let ty = bilinear_taps(in_h, out_h);
    let tx = bilinear_taps(in_w, out_w);
    let mut out = Array3::zeros((c, in_h, in_w));
    for ch in 0..c {
        for (i, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (j, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[[ch, i, j]];
                out[[ch, y0, x0]] += v * (1.0 - fy) * (1.0 - fx);
                out[[ch, y0, x1]] += v * (1.0 - fy) * fx;
                out[[ch, y1, x0]] += v * fy * (1.0 - fx);
                out[[ch, y1, x1]] += v * fy * fx;
            }
        }
    }
    out
}
