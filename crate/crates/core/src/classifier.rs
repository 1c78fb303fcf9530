//! Small fully connected softmax classifier used as the base model.
//!
//! Hidden layers use a smooth activation so that input gradients agree with
//! finite differences everywhere. The output is a softmax over the classes.
//!
//! # Checkpoint format
//!
//! Little-endian throughout: magic `PRSMODEL`, `u32` version, `u64` number of
//! layer widths followed by the widths as `u64`, `u8` activation (0 tanh,
//! 1 softplus), `u64` seed, then for every layer its `out x in` weight matrix
//! row-major followed by its `out` biases, all `f64`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::check_len;
use crate::projection::{read_f64s, read_u32, read_u64, read_u8, ProjectionBasis};
use crate::rng::{self, stream};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PRSMODEL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out x in`.
    w: DMatrix<f64>,
    b: DVector<f64>,
}

/// A multilayer perceptron `R^n -> simplex(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    dims: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
    seed: u64,
}

/// Activations recorded during a forward pass.
struct Trace {
    /// Pre-activations per layer.
    z: Vec<DVector<f64>>,
    /// Layer inputs: `a[0]` is the network input, `a[l]` the output of hidden layer `l - 1`.
    a: Vec<DVector<f64>>,
}

impl MlpClassifier {
    /// Glorot-uniform weights and zero biases, seeded.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        Self::validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = rng::keyed(seed, stream::INIT_WEIGHTS, l as u64);
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound)),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { dims: dims.to_vec(), activation, layers, seed })
    }

    /// All weights and biases zero.
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        Self::validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|pair| Layer { w: DMatrix::zeros(pair[1], pair[0]), b: DVector::zeros(pair[1]) })
            .collect();
        Ok(Self { dims: dims.to_vec(), activation, layers, seed: 0 })
    }

    /// Single-layer softmax regression `softmax(W x + b)`.
    pub fn linear(w: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::Dimension(format!("{} rows of W but {} biases", w.nrows(), b.len())));
        }
        let dims = vec![w.ncols(), w.nrows()];
        Self::validate_dims(&dims)?;
        Ok(Self { dims, activation: Activation::Tanh, layers: vec![Layer { w, b }], seed: 0 })
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "layer widths must be at least [input, classes] and positive, got {dims:?}"
            )));
        }
        if *dims.last().unwrap() < 2 {
            return Err(Error::InvalidParameter("need at least 2 output classes".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut a = Vec::with_capacity(self.layers.len());
        let mut z = Vec::with_capacity(self.layers.len());
        let mut cur = DVector::from_column_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = &layer.w * &cur + &layer.b;
            let next = if l == last { pre.clone() } else { pre.map(|v| self.activation.apply(v)) };
            a.push(cur);
            z.push(pre);
            cur = next;
        }
        Trace { z, a }
    }

    fn logits_unchecked(&self, x: &[f64]) -> DVector<f64> {
        let mut cur = DVector::from_column_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = &layer.w * &cur;
            pre += &layer.b;
            if l != last {
                pre.apply(|v| *v = self.activation.apply(*v));
            }
            cur = pre;
        }
        cur
    }

    pub fn logits(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_len("input", x.len(), self.input_dim())?;
        Ok(self.logits_unchecked(x))
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Hard prediction; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(self.logits(x)?.as_slice()))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> usize {
        argmax(self.logits_unchecked(x).as_slice())
    }

    /// Cross-entropy `-ln softmax(f(x))_y`.
    pub fn loss(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_label(y)?;
        let logits = self.logits(x)?;
        Ok(log_sum_exp(logits.as_slice()) - logits[y])
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::InvalidParameter(format!("label {y} out of range for {} classes", self.num_classes())));
        }
        Ok(())
    }

    /// Gradient of the cross-entropy loss with respect to the input.
    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<DVector<f64>> {
        check_len("input", x.len(), self.input_dim())?;
        self.check_label(y)?;
        let trace = self.trace(x);
        let mut delta = output_delta(trace.z.last().unwrap(), y);
        for l in (0..self.layers.len()).rev() {
            let back = self.layers[l].w.tr_mul(&delta);
            if l == 0 {
                return Ok(back);
            }
            delta = self.hidden_delta(&trace, l - 1, back);
        }
        unreachable!("network has at least one layer")
    }

    fn hidden_delta(&self, trace: &Trace, hidden: usize, upstream: DVector<f64>) -> DVector<f64> {
        let z = &trace.z[hidden];
        let a = &trace.a[hidden + 1];
        DVector::from_fn(upstream.len(), |i, _| upstream[i] * self.activation.derivative(z[i], a[i]))
    }

    /// Adds the parameter gradient of the loss at `(x, y)` into `grads`; returns the loss.
    fn accumulate_gradient(&self, x: &[f64], y: usize, grads: &mut [Layer]) -> f64 {
        let trace = self.trace(x);
        let out = trace.z.last().unwrap();
        let loss = log_sum_exp(out.as_slice()) - out[y];
        let mut delta = output_delta(out, y);
        for l in (0..self.layers.len()).rev() {
            grads[l].w.ger(1.0, &delta, &trace.a[l], 1.0);
            grads[l].b += &delta;
            if l > 0 {
                let back = self.layers[l].w.tr_mul(&delta);
                delta = self.hidden_delta(&trace, l - 1, back);
            }
        }
        loss
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        check_len("dataset dimension", data.dim(), self.input_dim())?;
        if data.is_empty() {
            return Ok(0.0);
        }
        let correct = data.rows().zip(data.labels()).filter(|(x, &y)| self.predict_unchecked(x) == y).count();
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u64).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let act = match self.activation {
            Activation::Tanh => 0u8,
            Activation::Softplus => 1u8,
        };
        w.write_all(&[act])?;
        w.write_all(&self.seed.to_le_bytes())?;
        for layer in &self.layers {
            for i in 0..layer.w.nrows() {
                for j in 0..layer.w.ncols() {
                    w.write_all(&layer.w[(i, j)].to_le_bytes())?;
                }
            }
            for v in layer.b.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let dims = (0..n).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims.iter().any(|&d| d == 0 || d > 1 << 20) {
            return Err(Error::Format(format!("implausible layer widths {dims:?}")));
        }
        let activation = match read_u8(&mut r)? {
            0 => Activation::Tanh,
            1 => Activation::Softplus,
            t => return Err(Error::Format(format!("unknown activation tag {t}"))),
        };
        let seed = read_u64(&mut r)?;
        let layers = dims
            .windows(2)
            .map(|pair| {
                let w = DMatrix::from_row_slice(pair[1], pair[0], &read_f64s(&mut r, pair[0] * pair[1])?);
                let b = DVector::from_vec(read_f64s(&mut r, pair[1])?);
                Ok(Layer { w, b })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::validate_dims(&dims).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self { dims, activation, layers, seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn output_delta(logits: &DVector<f64>, y: usize) -> DVector<f64> {
    let mut p = softmax(logits);
    p[y] -= 1.0;
    p
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let m = logits.max();
    let e = logits.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Optimizer and augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay_per_epoch: f64,
    /// Std of the Gaussian noise added to every training input.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay_per_epoch: 0.95,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lr_decay_per_epoch", self.lr_decay_per_epoch),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
}

/// Trains a copy of `model` with minibatch SGD and Gaussian input noise.
pub fn train(model: &MlpClassifier, data: &Dataset, cfg: &TrainConfig) -> Result<MlpClassifier> {
    Ok(train_with_history(model, data, cfg)?.0)
}

pub fn train_with_history(
    model: &MlpClassifier,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpClassifier, TrainHistory)> {
    check_len("dataset dimension", data.dim(), model.input_dim())?;
    run_sgd(model, data, cfg, |x, noise| x.iter().zip(noise).map(|(a, e)| a + e).collect())
}

/// Finetunes on reconstructions `U U^T (x + noise)`, the inputs the model
/// sees inside the projected classifier.
pub fn finetune_on_reconstruction(
    model: &MlpClassifier,
    basis: &ProjectionBasis,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<MlpClassifier> {
    Ok(finetune_with_history(model, basis, data, cfg)?.0)
}

pub fn finetune_with_history(
    model: &MlpClassifier,
    basis: &ProjectionBasis,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpClassifier, TrainHistory)> {
    check_len("dataset dimension", data.dim(), basis.dim())?;
    check_len("model input", model.input_dim(), basis.dim())?;
    run_sgd(model, data, cfg, |x, noise| {
        let noisy: Vec<f64> = x.iter().zip(noise).map(|(a, e)| a + e).collect();
        let z = basis.project_unchecked(&noisy);
        basis.reconstruct_unchecked(z.as_slice()).as_slice().to_vec()
    })
}

fn run_sgd(
    model: &MlpClassifier,
    data: &Dataset,
    cfg: &TrainConfig,
    transform: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> Result<(MlpClassifier, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::Data(format!("label {bad} out of range for a {}-class model", model.num_classes())));
    }
    let mut model = model.clone();
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }

    let n = data.len();
    let d = data.dim();
    let zero_like = |m: &MlpClassifier| -> Vec<Layer> {
        m.layers
            .iter()
            .map(|l| Layer { w: DMatrix::zeros(l.w.nrows(), l.w.ncols()), b: DVector::zeros(l.b.len()) })
            .collect()
    };
    let mut velocity = zero_like(&model);
    let mut lr = cfg.learning_rate;
    let mut order: Vec<usize> = (0..n).collect();
    let mut noise = vec![0.0; d];

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::keyed(cfg.seed, stream::TRAIN_SHUFFLE, epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = zero_like(&model);
            for (k, &i) in batch.iter().enumerate() {
                if cfg.noise_sigma > 0.0 {
                    let draw = (epoch * n + batch_idx * cfg.batch_size + k) as u64;
                    let mut noise_rng = rng::keyed(cfg.seed, stream::TRAIN_NOISE, draw);
                    for e in noise.iter_mut() {
                        let g: f64 = StandardNormal.sample(&mut noise_rng);
                        *e = cfg.noise_sigma * g;
                    }
                }
                let x = transform(data.row(i), &noise);
                total_loss += model.accumulate_gradient(&x, data.label(i), &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            for ((layer, grad), vel) in model.layers.iter_mut().zip(&grads).zip(velocity.iter_mut()) {
                // v <- mu v + (g + wd w);  w <- w - lr v
                vel.w *= cfg.momentum;
                vel.w += &grad.w * scale + &layer.w * cfg.weight_decay;
                vel.b *= cfg.momentum;
                vel.b += &grad.b * scale;
                layer.w -= &vel.w * lr;
                layer.b -= &vel.b * lr;
            }
        }
        history.epoch_loss.push(total_loss / n as f64);
        lr *= cfg.lr_decay_per_epoch;
    }
    Ok((model, history))
}
