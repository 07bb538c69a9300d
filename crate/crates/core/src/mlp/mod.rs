//! Fully connected classifier trained by minibatch SGD.
//!
//! The network is deliberately small and convolution-free: encrypted inputs
//! have no usable spatial structure, so a feed-forward stack over the flat
//! 784-byte vector is the reference architecture. Cross-entropy at a
//! candidate label doubles as the conformal nonconformity score, so the loss
//! definition here (including its 1e-12 probability floor) is the one the
//! `conformal` module builds on.
//!
//! Training is deterministic: weights come from a seeded scaled-uniform
//! scheme, each epoch's shuffle runs on its own ChaCha stream, and the
//! kernels in [`linalg`] accumulate in a fixed order whether or not they run
//! in parallel.

pub mod linalg;
mod io;

pub use io::{read_model, write_model};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{ImageSet, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad architecture: {0}")]
    Architecture(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("feature dimension {found} does not match model input {expected}")]
    FeatureDimension { expected: usize, found: usize },
    #[error("non-finite input at component {0}")]
    NonFiniteInput(usize),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("bad model file: {0}")]
    BadModelFile(String),
}

/// Loss floor: cross-entropy is computed on `max(p, 1e-12)`, keeping
/// nonconformity scores finite as the e-value threshold requires.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
}

/// One affine layer; weights are input-major (`weights[k*out_dim + o]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

/// A feed-forward network; `MlpModel` is the trained `f32` form.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
    pub arch_id: String,
    pub train_seed: u64,
}

pub type MlpModel = Mlp<f32>;

/// Layer-size descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub dims: Vec<usize>,
    pub id: String,
}

impl Arch {
    /// The reference architecture, 784 → 128(relu) → 64(relu) → 10(softmax).
    ///
    /// Small on purpose: with ~109k parameters the net cannot memorize the
    /// ciphertext training set, so encrypted-domain scores stay calibrated
    /// while plaintext accuracy still clears 97%.
    pub fn reference() -> Self {
        Arch {
            dims: vec![784, 128, 64, 10],
            id: "ref-v1".to_string(),
        }
    }

    pub fn custom(dims: Vec<usize>) -> Self {
        let id = format!(
            "mlp-{}",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
        );
        Arch { dims, id }
    }

    fn validate(&self) -> Result<(), MlpError> {
        if self.dims.len() < 2 {
            return Err(MlpError::Architecture(format!(
                "need at least input and output dims, got {:?}",
                self.dims
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(MlpError::Architecture(format!(
                "zero-sized layer in {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// Training hyperparameters. Defaults reproduce the reference regime:
/// batch 64, 32 epochs, plain SGD, seed 2024.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    SgdMomentum { momentum: f32 },
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 32,
            learning_rate: DEFAULT_LEARNING_RATE,
            optimizer: Optimizer::Sgd,
            seed: 2024,
            shuffle_each_epoch: true,
        }
    }
}

/// Default learning rate for the reference architecture.
pub const DEFAULT_LEARNING_RATE: f32 = 0.03;

/// Per-epoch training statistics.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub eval_accuracy: Option<f64>,
}

/// Loss/accuracy trace returned alongside the trained model.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

/// Normalized features plus labels, ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub dim: usize,
}

impl TrainData {
    pub fn from_set(set: &ImageSet) -> Self {
        TrainData {
            features: set.normalized(),
            labels: set.labels().to_vec(),
            dim: crate::data::IMAGE_BYTES,
        }
    }

    pub fn new(features: Vec<f32>, labels: Vec<u8>, dim: usize) -> Self {
        debug_assert_eq!(features.len(), labels.len() * dim);
        TrainData { features, labels, dim }
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Seeded scaled-uniform initialization: weights uniform in
/// `±sqrt(6/(fan_in+fan_out))`, biases zero. Deterministic per seed.
pub fn init_model(arch: &Arch, seed: u64) -> Result<MlpModel, MlpError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(arch.dims.len() - 1);
    for (li, (&fi, &fo)) in arch.dims.iter().zip(&arch.dims[1..]).enumerate() {
        let bound = (6.0 / (fi + fo) as f64).sqrt() as f32;
        let weights: Vec<f32> = (0..fi * fo).map(|_| rng.random_range(-bound..bound)).collect();
        let activation = if li + 1 == arch.dims.len() - 1 {
            Activation::Softmax
        } else {
            Activation::Relu
        };
        layers.push(Layer {
            in_dim: fi,
            out_dim: fo,
            weights,
            bias: vec![0.0; fo],
            activation,
        });
    }
    Ok(Mlp {
        layers,
        arch_id: arch.id.clone(),
        train_seed: seed,
    })
}

impl<T: Float + Send + Sync> Mlp<T> {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Forward pass over `rows` stacked inputs; returns softmax rows.
    /// Inputs are assumed finite (they come from pixel normalization).
    pub fn forward_batch(&self, x: &[T], rows: usize) -> Vec<T> {
        let mut cur = x.to_vec();
        let mut cur_dim = self.input_dim();
        debug_assert_eq!(x.len(), rows * cur_dim);
        for layer in &self.layers {
            let mut next = vec![T::zero(); rows * layer.out_dim];
            linalg::forward_affine(
                &cur,
                rows,
                cur_dim,
                &layer.weights,
                &layer.bias,
                layer.out_dim,
                &mut next,
            );
            match layer.activation {
                Activation::Relu => linalg::relu_inplace(&mut next),
                Activation::Softmax => {
                    linalg::softmax_rows_ce(&mut next, rows, layer.out_dim, None);
                }
            }
            cur = next;
            cur_dim = layer.out_dim;
        }
        cur
    }
}

/// Softmax output for a single input vector.
///
/// The result is nonnegative and sums to 1 within 1e-6.
pub fn forward(model: &MlpModel, x: &[f32]) -> Result<Vec<f32>, MlpError> {
    if x.len() != model.input_dim() {
        return Err(MlpError::FeatureDimension {
            expected: model.input_dim(),
            found: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(MlpError::NonFiniteInput(i));
    }
    Ok(model.forward_batch(x, 1))
}

/// Cross-entropy of a probability row at `label`:
/// `-ln(max(probs[label], 1e-12))`.
///
/// Panics if `label` is out of range.
pub fn cross_entropy(probs: &[f32], label: usize) -> f32 {
    let p = f64::from(probs[label]).max(PROB_FLOOR);
    (-p.ln()) as f32
}

/// Classification accuracy of `model` on `data`.
pub fn accuracy(model: &MlpModel, data: &TrainData) -> f64 {
    if data.count() == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    const CHUNK: usize = 512;
    for start in (0..data.count()).step_by(CHUNK) {
        let rows = CHUNK.min(data.count() - start);
        let probs = model.forward_batch(
            &data.features[start * data.dim..(start + rows) * data.dim],
            rows,
        );
        for r in 0..rows {
            let row = &probs[r * NUM_CLASSES..(r + 1) * NUM_CLASSES];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == data.labels[start + r] as usize {
                hits += 1;
            }
        }
    }
    hits as f64 / data.count() as f64
}

struct BatchBuffers<T> {
    activations: Vec<Vec<T>>, // per layer output, batch-major
    deltas: Vec<Vec<T>>,
    grads_w: Vec<Vec<T>>,
    grads_b: Vec<Vec<T>>,
}

impl<T: Float + Send + Sync> BatchBuffers<T> {
    fn new(model: &Mlp<T>, batch: usize) -> Self {
        BatchBuffers {
            activations: model
                .layers
                .iter()
                .map(|l| vec![T::zero(); batch * l.out_dim])
                .collect(),
            deltas: model
                .layers
                .iter()
                .map(|l| vec![T::zero(); batch * l.out_dim])
                .collect(),
            grads_w: model.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            grads_b: model.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }
}

/// One forward+backward pass over a batch. Returns the summed loss.
/// Gradients are means over the batch.
fn forward_backward<T: Float + Send + Sync>(
    model: &Mlp<T>,
    x: &[T],
    labels: &[u8],
    rows: usize,
    buf: &mut BatchBuffers<T>,
) -> f64 {
    let n_layers = model.layers.len();
    // forward
    let mut input: &[T] = x;
    for (li, layer) in model.layers.iter().enumerate() {
        let (head, tail) = buf.activations.split_at_mut(li);
        let out = &mut tail[0][..rows * layer.out_dim];
        let a_prev: &[T] = if li == 0 {
            input
        } else {
            &head[li - 1][..rows * layer.in_dim]
        };
        linalg::forward_affine(a_prev, rows, layer.in_dim, &layer.weights, &layer.bias, layer.out_dim, out);
        match layer.activation {
            Activation::Relu => linalg::relu_inplace(out),
            Activation::Softmax => {}
        }
    }
    input = x;
    let last = n_layers - 1;
    let classes = model.layers[last].out_dim;
    let loss = {
        let out = &mut buf.activations[last][..rows * classes];
        linalg::softmax_rows_ce(out, rows, classes, Some(labels))
    };

    // output delta: (p - onehot) / rows
    let inv = T::from(1.0 / rows as f64).unwrap();
    {
        let probs = &buf.activations[last][..rows * classes];
        let delta = &mut buf.deltas[last][..rows * classes];
        for r in 0..rows {
            for c in 0..classes {
                let mut v = probs[r * classes + c];
                if c == labels[r] as usize {
                    v = v - T::one();
                }
                delta[r * classes + c] = v * inv;
            }
        }
    }

    // backward
    for li in (0..n_layers).rev() {
        let layer = &model.layers[li];
        let a_prev: &[T] = if li == 0 {
            input
        } else {
            &buf.activations[li - 1][..rows * layer.in_dim]
        };
        {
            let delta = &buf.deltas[li][..rows * layer.out_dim];
            linalg::grad_weights(a_prev, delta, rows, layer.in_dim, layer.out_dim, &mut buf.grads_w[li]);
            linalg::grad_bias(delta, rows, layer.out_dim, &mut buf.grads_b[li]);
        }
        if li > 0 {
            let (head, tail) = buf.deltas.split_at_mut(li);
            let delta = &tail[0][..rows * layer.out_dim];
            let dprev = &mut head[li - 1][..rows * layer.in_dim];
            linalg::backprop_delta(delta, rows, layer.out_dim, &layer.weights, layer.in_dim, dprev);
            linalg::relu_backward(dprev, &buf.activations[li - 1][..rows * layer.in_dim]);
        }
    }
    loss
}

/// Trains `model` on `data` by minibatch gradient descent.
///
/// Runs `epochs × ceil(count/batch)` updates; deterministic given the seed
/// and data order. If `eval` is given, accuracy on it is recorded per epoch.
pub fn train(
    mut model: MlpModel,
    data: &TrainData,
    cfg: &TrainConfig,
    eval: Option<&TrainData>,
) -> Result<(MlpModel, TrainTrace), MlpError> {
    let n = data.count();
    if n == 0 {
        return Err(MlpError::EmptyDataset);
    }
    if data.dim != model.input_dim() {
        return Err(MlpError::FeatureDimension {
            expected: model.input_dim(),
            found: data.dim,
        });
    }
    let batch = cfg.batch_size.max(1);
    let mut buf = BatchBuffers::new(&model, batch);
    let mut velocity: Option<Vec<Vec<f32>>> = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::SgdMomentum { .. } => Some(
            model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len() + l.out_dim])
                .collect(),
        ),
    };
    let mut indices: Vec<u32> = (0..n as u32).collect();
    let mut batch_x = vec![0.0f32; batch * data.dim];
    let mut batch_y = vec![0u8; batch];
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            // fresh ChaCha stream per epoch
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64 + 1);
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                indices.swap(i, j);
            }
        }
        let mut epoch_loss = 0.0f64;
        for chunk in indices.chunks(batch) {
            let rows = chunk.len();
            for (r, &idx) in chunk.iter().enumerate() {
                batch_x[r * data.dim..(r + 1) * data.dim].copy_from_slice(data.row(idx as usize));
                batch_y[r] = data.labels[idx as usize];
            }
            epoch_loss += forward_backward(&model, &batch_x[..rows * data.dim], &batch_y[..rows], rows, &mut buf);
            for (li, layer) in model.layers.iter_mut().enumerate() {
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        linalg::sgd_step(&mut layer.weights, &buf.grads_w[li], cfg.learning_rate);
                        linalg::sgd_step(&mut layer.bias, &buf.grads_b[li], cfg.learning_rate);
                    }
                    Optimizer::SgdMomentum { momentum } => {
                        let v = &mut velocity.as_mut().unwrap()[li];
                        let (vw, vb) = v.split_at_mut(layer.weights.len());
                        linalg::momentum_step(&mut layer.weights, &buf.grads_w[li], vw, cfg.learning_rate, momentum);
                        linalg::momentum_step(&mut layer.bias, &buf.grads_b[li], vb, cfg.learning_rate, momentum);
                    }
                }
            }
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(MlpError::Diverged { epoch });
        }
        trace.epochs.push(EpochStats {
            mean_loss,
            eval_accuracy: eval.map(|e| accuracy(&model, e)),
        });
    }
    Ok((model, trace))
}

/// Converts the trained `f32` model to `f64` for validation work.
pub fn to_f64(model: &MlpModel) -> Mlp<f64> {
    Mlp {
        layers: model
            .layers
            .iter()
            .map(|l| Layer {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                weights: l.weights.iter().map(|&w| f64::from(w)).collect(),
                bias: l.bias.iter().map(|&b| f64::from(b)).collect(),
                activation: l.activation,
            })
            .collect(),
        arch_id: model.arch_id.clone(),
        train_seed: model.train_seed,
    }
}

fn loss_f64(model: &Mlp<f64>, x: &[f64], label: u8) -> f64 {
    let probs = model.forward_batch(x, 1);
    let p = probs[label as usize].max(PROB_FLOOR);
    -p.ln()
}

/// Compares the analytic gradient against central finite differences
/// (step 1e-5, 64-bit) on an evenly strided parameter subset; returns the
/// maximum relative error.
///
/// Intended for small models; cost is two forward passes per sampled
/// parameter.
pub fn gradient_check(model: &MlpModel, x: &[f32], label: u8) -> f64 {
    gradient_check_with_step(model, x, label, 1e-5, 400).0
}

/// Gradient check with explicit step size and sample budget. Returns
/// `(max relative error, max absolute analytic gradient)`.
pub fn gradient_check_with_step(
    model: &MlpModel,
    x: &[f32],
    label: u8,
    step: f64,
    max_samples: usize,
) -> (f64, f64) {
    let mut m = to_f64(model);
    let x64: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();

    // analytic gradient in f64
    let mut buf = BatchBuffers::new(&m, 1);
    forward_backward(&m, &x64, &[label], 1, &mut buf);

    let mut analytic = Vec::new();
    for li in 0..m.layers.len() {
        analytic.extend_from_slice(&buf.grads_w[li]);
        analytic.extend_from_slice(&buf.grads_b[li]);
    }
    let total = analytic.len();
    let stride = (total / max_samples).max(1);

    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for (slot, &a) in analytic.iter().enumerate() {
        max_abs = max_abs.max(a.abs());
        if slot % stride != 0 {
            continue;
        }
        let fd = {
            let p = param_mut(&mut m, slot);
            let orig = *p;
            *p = orig + step;
            let up = loss_f64(&m, &x64, label);
            *(param_mut(&mut m, slot)) = orig - step;
            let down = loss_f64(&m, &x64, label);
            *(param_mut(&mut m, slot)) = orig;
            (up - down) / (2.0 * step)
        };
        let denom = a.abs().max(fd.abs());
        if denom > 1e-8 {
            max_rel = max_rel.max((a - fd).abs() / denom);
        }
    }
    (max_rel, max_abs)
}

/// Flat view over (weights then bias) of each layer in order.
fn param_mut(model: &mut Mlp<f64>, mut slot: usize) -> &mut f64 {
    for layer in &mut model.layers {
        if slot < layer.weights.len() {
            return &mut layer.weights[slot];
        }
        slot -= layer.weights.len();
        if slot < layer.bias.len() {
            return &mut layer.bias[slot];
        }
        slot -= layer.bias.len();
    }
    panic!("parameter slot out of range");
}

#[cfg(test)]
mod tests;
