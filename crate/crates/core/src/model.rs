//! Fully connected rectifier backbone and the SGD trainer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::heads::{ClassifierHead, HeadKind, LabeledBatch};
use crate::numerics::{argmax, RealMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out×in
    pub weights: RealMatrix,
    pub bias: Vec<f64>,
}

/// Affine layers with a rectifier between them. The last layer emits raw
/// features; a backbone with a single width is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBackbone {
    widths: Vec<usize>,
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGradients {
    /// `(d_weights, d_bias)` per layer.
    pub layers: Vec<(RealMatrix, Vec<f64>)>,
}

impl BackboneGradients {
    pub fn as_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }
}

struct ForwardCache {
    /// Input to each layer; the final entry is the feature output.
    activations: Vec<RealMatrix>,
}

impl MlpBackbone {
    pub fn from_layers(widths: Vec<usize>, layers: Vec<DenseLayer>) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::contract(
                "backbone widths must be non-empty and positive",
            ));
        }
        if layers.len() + 1 != widths.len() {
            return Err(Error::contract(format!(
                "{} widths need {} layers, got {}",
                widths.len(),
                widths.len() - 1,
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            if layer.weights.rows() != fan_out
                || layer.weights.cols() != fan_in
                || layer.bias.len() != fan_out
            {
                return Err(Error::contract(format!(
                    "layer {l} has shape {}x{} (+{}), expected {fan_out}x{fan_in}",
                    layer.weights.rows(),
                    layer.weights.cols(),
                    layer.bias.len()
                )));
            }
        }
        Ok(Self { widths, layers })
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::contract(
                "backbone widths must be non-empty and positive",
            ));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    RealMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                let bias = (0..fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                DenseLayer { weights, bias }
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    fn forward_cached(&self, inputs: &RealMatrix) -> Result<ForwardCache> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::contract(format!(
                "inputs have {} columns, backbone expects {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.clone());
        let last = self.layers.len().saturating_sub(1);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = activations[l].matmul_transpose(&layer.weights)?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                    if l != last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    pub fn forward(&self, inputs: &RealMatrix) -> Result<RealMatrix> {
        let mut cache = self.forward_cached(inputs)?;
        Ok(cache.activations.pop().expect("at least the input"))
    }

    /// Parameter gradients given `∂loss/∂features`.
    pub fn backward(
        &self,
        inputs: &RealMatrix,
        d_features: &RealMatrix,
    ) -> Result<BackboneGradients> {
        let cache = self.forward_cached(inputs)?;
        self.backward_from(&cache, d_features)
    }

    fn backward_from(
        &self,
        cache: &ForwardCache,
        d_features: &RealMatrix,
    ) -> Result<BackboneGradients> {
        let out = cache.activations.last().expect("at least the input");
        if d_features.rows() != out.rows() || d_features.cols() != out.cols() {
            return Err(Error::contract(format!(
                "feature gradient is {}x{}, features are {}x{}",
                d_features.rows(),
                d_features.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = d_features.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.activations[l];
            let d_weights = upstream.transpose_matmul(input)?;
            let d_bias = upstream.column_sums();
            if l > 0 {
                let mut d_input = upstream.matmul(&self.layers[l].weights)?;
                // the input of layer l is a rectified output; zero means the
                // unit was off (subgradient 0 at the kink)
                for (g, &a) in d_input.data_mut().iter_mut().zip(input.data()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                upstream = d_input;
            }
            grads.push((d_weights, d_bias));
        }
        grads.reverse();
        Ok(BackboneGradients { layers: grads })
    }
}

fn default_learning_rate() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    64
}
fn default_epochs() -> usize {
    30
}
fn default_decay_epochs() -> Vec<usize> {
    vec![15, 20, 25]
}
fn default_decay_factor() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_true")]
    pub nesterov: bool,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Epoch indices (0-based) from which the learning rate is divided by
    /// `decay_factor` once more.
    #[serde(default = "default_decay_epochs")]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            nesterov: true,
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            decay_epochs: default_decay_epochs(),
            decay_factor: default_decay_factor(),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::Config("decay_factor must be positive".into()));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "decay_epochs must be strictly increasing".into(),
            ));
        }
        if let Some(&bad) = self
            .decay_epochs
            .iter()
            .find(|&&e| e < 1 || e > self.epochs.max(1))
        {
            return Err(Error::Config(format!(
                "decay epoch {bad} outside [1, {}]",
                self.epochs
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate / self.decay_factor.powi(decays as i32)
    }
}

/// Everything needed to continue or reproduce training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub backbone: MlpBackbone,
    pub head: ClassifierHead,
    /// One buffer per trainable tensor, backbone tensors first.
    pub velocities: Vec<Vec<f64>>,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

impl TrainState {
    /// Initialises backbone then head from one seeded stream.
    pub fn init(
        widths: &[usize],
        head_kind: HeadKind,
        classes: usize,
        entropic_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::contract("a head needs at least one class"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = MlpBackbone::init(widths, &mut rng)?;
        let head = ClassifierHead::init(
            head_kind,
            backbone.feature_dim(),
            classes,
            entropic_scale,
            &mut rng,
        );
        Self::new(backbone, head, seed)
    }

    pub fn new(backbone: MlpBackbone, head: ClassifierHead, seed: u64) -> Result<Self> {
        if backbone.feature_dim() != head.dim() {
            return Err(Error::contract(format!(
                "backbone emits {} features, head expects {}",
                backbone.feature_dim(),
                head.dim()
            )));
        }
        let mut state = Self {
            backbone,
            head,
            velocities: Vec::new(),
            epoch: 0,
            seed,
        };
        state.velocities = state
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();
        Ok(state)
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut p = self.backbone.parameters();
        p.extend(self.head.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.backbone.parameters_mut();
        p.extend(self.head.parameters_mut());
        p
    }

    pub fn features(&self, inputs: &RealMatrix) -> Result<RealMatrix> {
        self.backbone.forward(inputs)
    }

    pub fn predict(&self, inputs: &RealMatrix) -> Result<Vec<usize>> {
        self.head.predict(&self.features(inputs)?)
    }

    /// Mean loss and all parameter gradients (backbone then head) for a batch.
    pub fn loss_and_gradients(
        &self,
        batch: &LabeledBatch,
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<usize>)> {
        let cache = self.backbone.forward_cached(&batch.features)?;
        let features = cache.activations.last().expect("at least the input");
        let head_grads = self.head.backward(features, &batch.targets)?;
        let backbone_grads = self
            .backbone
            .backward_from(&cache, &head_grads.d_features)?;
        let predictions = self
            .head
            .forward_logits(features)?
            .iter_rows()
            .map(argmax)
            .collect();
        let grads = backbone_grads
            .as_slices()
            .into_iter()
            .chain(head_grads.params.as_slices())
            .map(<[f64]>::to_vec)
            .collect();
        Ok((head_grads.loss, grads, predictions))
    }

    /// One SGD step at the learning rate scheduled for the current epoch.
    /// Returns the loss before the update.
    pub fn sgd_step(
        &mut self,
        batch: &LabeledBatch,
        cfg: &SgdConfig,
        batch_index: usize,
    ) -> Result<f64> {
        Ok(self.step_inner(batch, cfg, batch_index)?.0)
    }

    fn step_inner(
        &mut self,
        batch: &LabeledBatch,
        cfg: &SgdConfig,
        batch_index: usize,
    ) -> Result<(f64, Vec<usize>)> {
        let (loss, grads, predictions) = self.loss_and_gradients(batch)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: self.epoch,
                batch: batch_index,
                loss,
            });
        }
        let lr = cfg.learning_rate_at(self.epoch);
        let (mu, wd, nesterov) = (cfg.momentum, cfg.weight_decay, cfg.nesterov);
        let mut velocities = std::mem::take(&mut self.velocities);
        for ((param, grad), vel) in self
            .parameters_mut()
            .into_iter()
            .zip(&grads)
            .zip(velocities.iter_mut())
        {
            for ((p, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                let g = g + wd * *p;
                *v = mu * *v + g;
                let step = if nesterov { g + mu * *v } else { *v };
                *p -= lr * step;
            }
        }
        self.velocities = velocities;
        if self
            .parameters()
            .iter()
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::TrainingDiverged {
                epoch: self.epoch,
                batch: batch_index,
                loss,
            });
        }
        Ok((loss, predictions))
    }

    /// Trains for `cfg.epochs` further epochs, reshuffling `train` every
    /// epoch with a stream derived from the state's seed. `on_epoch` sees
    /// each record as it is produced.
    pub fn fit(
        &mut self,
        train: &Dataset,
        cfg: &SgdConfig,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        cfg.validate()?;
        let mut trace = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            let lr = cfg.learning_rate_at(self.epoch);
            let batches = epoch_batches(train, cfg.batch_size, self.seed, self.epoch)?;
            let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
            for (b, batch) in batches.iter().enumerate() {
                let (loss, predictions) = self.step_inner(batch, cfg, b)?;
                loss_sum += loss * batch.targets.len() as f64;
                hits += predictions
                    .iter()
                    .zip(&batch.targets)
                    .filter(|(p, t)| p == t)
                    .count();
                seen += batch.targets.len();
            }
            let record = EpochRecord {
                epoch: self.epoch,
                learning_rate: lr,
                mean_loss: loss_sum / seen.max(1) as f64,
                train_accuracy: hits as f64 / seen.max(1) as f64,
            };
            on_epoch(&record);
            trace.push(record);
            self.epoch += 1;
        }
        Ok(trace)
    }
}
