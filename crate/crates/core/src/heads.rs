//! Output layer + loss for the three interchangeable heads.
//!
//! All heads map features `f` (n×d) to logits (n×c) and train with the mean
//! of `−ln softmax(scale · logits)[target]`:
//!
//! | head        | logits                          | training scale |
//! |-------------|---------------------------------|----------------|
//! | SoftMax     | `W f + b`                       | 1              |
//! | IsoMax      | `−‖f − p_j‖`                    | `E_s`          |
//! | IsoMax+     | `−|d_s| · ‖f̂ − p̂_j‖`            | `E_s`          |
//!
//! where `v̂ = v / max(‖v‖, eps)`. The entropic scale `E_s` is a fixed
//! constant and only enters training; inference probabilities use the raw
//! logits. The loss is evaluated as probabilities first and logarithm second,
//! with the target probability floored at [`PROBABILITY_FLOOR`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    argmax, l2_norm, log_sum_exp, pairwise_euclidean, row_normalize, stable_softmax_rows,
    RealMatrix, NORM_EPS,
};

pub const DEFAULT_ENTROPIC_SCALE: f64 = 10.0;

/// Lower bound applied to the target probability before taking its log.
pub const PROBABILITY_FLOOR: f64 = 1e-30;

/// Lower bound on a distance when it appears as a gradient denominator.
pub const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    SoftMax,
    IsoMax,
    IsoMaxPlus,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::SoftMax, HeadKind::IsoMax, HeadKind::IsoMaxPlus];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::SoftMax => "softmax",
            HeadKind::IsoMax => "isomax",
            HeadKind::IsoMaxPlus => "isomaxplus",
        }
    }

    pub fn is_distance_based(self) -> bool {
        !matches!(self, HeadKind::SoftMax)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            HeadKind::SoftMax => 0,
            HeadKind::IsoMax => 1,
            HeadKind::IsoMaxPlus => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown head kind {s:?}")))
    }
}

/// Feature rows paired with class targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub features: RealMatrix,
    pub targets: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(features: RealMatrix, targets: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::contract("empty batch"));
        }
        if features.rows() != targets.len() {
            return Err(Error::contract(format!(
                "batch has {} rows but {} targets",
                features.rows(),
                targets.len()
            )));
        }
        Ok(Self { features, targets })
    }
}

/// Affine output layer followed by plain cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaxHead {
    /// c×d
    pub weights: RealMatrix,
    pub bias: Vec<f64>,
}

impl SoftMaxHead {
    pub fn new(weights: RealMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::contract(format!(
                "bias has length {}, expected {}",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Self { weights, bias })
    }

    /// Uniform in `±1/√d` for weights and bias, the usual linear-layer default.
    pub fn init<R: Rng + ?Sized>(dim: usize, classes: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim.max(1) as f64).sqrt();
        let weights = RealMatrix::from_fn(classes, dim, |_, _| rng.random_range(-bound..bound));
        let bias = (0..classes)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self { weights, bias }
    }
}

/// Prototype head on raw (unnormalised) features.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoMaxHead {
    /// c×d, zero at initialisation.
    pub prototypes: RealMatrix,
    pub entropic_scale: f64,
}

impl IsoMaxHead {
    pub fn new(dim: usize, classes: usize, entropic_scale: f64) -> Self {
        Self {
            prototypes: RealMatrix::zeros(classes, dim),
            entropic_scale,
        }
    }
}

/// Prototype head on normalised features and prototypes, with a learnable
/// distance scale entering as `|d_s|`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoMaxPlusHead {
    /// c×d, drawn from N(0, 1) at initialisation.
    pub prototypes: RealMatrix,
    pub distance_scale: f64,
    pub entropic_scale: f64,
}

impl IsoMaxPlusHead {
    /// Prototypes are drawn row by row (class 0 first) from `rng`.
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        classes: usize,
        entropic_scale: f64,
        rng: &mut R,
    ) -> Self {
        let prototypes = RealMatrix::from_fn(classes, dim, |_, _| rng.sample(StandardNormal));
        Self {
            prototypes,
            distance_scale: 1.0,
            entropic_scale,
        }
    }

    pub fn effective_distance_scale(&self) -> f64 {
        self.distance_scale.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierHead {
    SoftMax(SoftMaxHead),
    IsoMax(IsoMaxHead),
    IsoMaxPlus(IsoMaxPlusHead),
}

/// One forward pass through a head.
///
/// `distances` holds the unscaled feature-prototype distances for the
/// distance-based heads (`‖f − p‖` for IsoMax, `‖f̂ − p̂‖` for IsoMax+), so
/// predictions and the minimum-distance score come from the same pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: RealMatrix,
    pub distances: Option<RealMatrix>,
}

impl HeadOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits.iter_rows().map(argmax).collect()
    }

    /// Per-row minimum of the unscaled distances, if the head has any.
    pub fn min_distances(&self) -> Option<Vec<f64>> {
        self.distances.as_ref().map(|d| {
            d.iter_rows()
                .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
                .collect()
        })
    }
}

/// Gradients of a head's own parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGradients {
    SoftMax {
        d_weights: RealMatrix,
        d_bias: Vec<f64>,
    },
    IsoMax {
        d_prototypes: RealMatrix,
    },
    IsoMaxPlus {
        d_prototypes: RealMatrix,
        d_distance_scale: f64,
    },
}

impl ParamGradients {
    /// Flat views in the same order as [`ClassifierHead::parameters`].
    pub fn as_slices(&self) -> Vec<&[f64]> {
        match self {
            ParamGradients::SoftMax { d_weights, d_bias } => vec![d_weights.data(), d_bias],
            ParamGradients::IsoMax { d_prototypes } => vec![d_prototypes.data()],
            ParamGradients::IsoMaxPlus {
                d_prototypes,
                d_distance_scale,
            } => vec![d_prototypes.data(), std::slice::from_ref(d_distance_scale)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    /// Mean batch loss at the point the gradients were taken.
    pub loss: f64,
    /// ∂loss/∂features, n×d.
    pub d_features: RealMatrix,
    pub params: ParamGradients,
}

impl ClassifierHead {
    /// Builds a freshly initialised head of the given kind. Only the SoftMax
    /// and IsoMax+ heads consume `rng`.
    pub fn init<R: Rng + ?Sized>(
        kind: HeadKind,
        dim: usize,
        classes: usize,
        entropic_scale: f64,
        rng: &mut R,
    ) -> Self {
        match kind {
            HeadKind::SoftMax => ClassifierHead::SoftMax(SoftMaxHead::init(dim, classes, rng)),
            HeadKind::IsoMax => {
                ClassifierHead::IsoMax(IsoMaxHead::new(dim, classes, entropic_scale))
            }
            HeadKind::IsoMaxPlus => {
                ClassifierHead::IsoMaxPlus(IsoMaxPlusHead::init(dim, classes, entropic_scale, rng))
            }
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            ClassifierHead::SoftMax(_) => HeadKind::SoftMax,
            ClassifierHead::IsoMax(_) => HeadKind::IsoMax,
            ClassifierHead::IsoMaxPlus(_) => HeadKind::IsoMaxPlus,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ClassifierHead::SoftMax(h) => h.weights.cols(),
            ClassifierHead::IsoMax(h) => h.prototypes.cols(),
            ClassifierHead::IsoMaxPlus(h) => h.prototypes.cols(),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ClassifierHead::SoftMax(h) => h.weights.rows(),
            ClassifierHead::IsoMax(h) => h.prototypes.rows(),
            ClassifierHead::IsoMaxPlus(h) => h.prototypes.rows(),
        }
    }

    /// Scale applied to the logits inside the training softmax.
    pub fn training_scale(&self) -> f64 {
        match self {
            ClassifierHead::SoftMax(_) => 1.0,
            ClassifierHead::IsoMax(h) => h.entropic_scale,
            ClassifierHead::IsoMaxPlus(h) => h.entropic_scale,
        }
    }

    /// Trainable tensors as flat slices.
    pub fn parameters(&self) -> Vec<&[f64]> {
        match self {
            ClassifierHead::SoftMax(h) => vec![h.weights.data(), &h.bias],
            ClassifierHead::IsoMax(h) => vec![h.prototypes.data()],
            ClassifierHead::IsoMaxPlus(h) => {
                vec![h.prototypes.data(), std::slice::from_ref(&h.distance_scale)]
            }
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ClassifierHead::SoftMax(h) => vec![h.weights.data_mut(), &mut h.bias],
            ClassifierHead::IsoMax(h) => vec![h.prototypes.data_mut()],
            ClassifierHead::IsoMaxPlus(h) => vec![
                h.prototypes.data_mut(),
                std::slice::from_mut(&mut h.distance_scale),
            ],
        }
    }

    fn check_features(&self, features: &RealMatrix) -> Result<()> {
        if features.cols() != self.dim() {
            return Err(Error::contract(format!(
                "features have {} columns, head expects {}",
                features.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_targets(&self, features: &RealMatrix, targets: &[usize]) -> Result<()> {
        if features.rows() != targets.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} targets",
                features.rows(),
                targets.len()
            )));
        }
        if features.rows() == 0 {
            return Err(Error::contract("empty batch"));
        }
        let c = self.classes();
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::contract(format!(
                "target {bad} out of range for {c} classes"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, features: &RealMatrix) -> Result<HeadOutput> {
        self.check_features(features)?;
        match self {
            ClassifierHead::SoftMax(h) => {
                let mut logits = features.matmul_transpose(&h.weights)?;
                for i in 0..logits.rows() {
                    for (v, b) in logits.row_mut(i).iter_mut().zip(&h.bias) {
                        *v += b;
                    }
                }
                Ok(HeadOutput {
                    logits,
                    distances: None,
                })
            }
            ClassifierHead::IsoMax(h) => {
                let distances = pairwise_euclidean(features, &h.prototypes)?;
                Ok(HeadOutput {
                    logits: distances.map(|d| -d),
                    distances: Some(distances),
                })
            }
            ClassifierHead::IsoMaxPlus(h) => {
                let distances = pairwise_euclidean(
                    &row_normalize(features, NORM_EPS),
                    &row_normalize(&h.prototypes, NORM_EPS),
                )?;
                let scale = h.effective_distance_scale();
                Ok(HeadOutput {
                    logits: distances.map(|d| -(scale * d)),
                    distances: Some(distances),
                })
            }
        }
    }

    pub fn forward_logits(&self, features: &RealMatrix) -> Result<RealMatrix> {
        Ok(self.forward(features)?.logits)
    }

    /// Probabilities the loss is computed from (`E_s` applied).
    pub fn training_probabilities(&self, features: &RealMatrix) -> Result<RealMatrix> {
        let logits = self.forward_logits(features)?;
        Ok(stable_softmax_rows(&logits, self.training_scale()))
    }

    /// Probabilities for scoring, with the entropic scale removed.
    pub fn inference_probabilities(&self, features: &RealMatrix) -> Result<RealMatrix> {
        let logits = self.forward_logits(features)?;
        Ok(stable_softmax_rows(&logits, 1.0))
    }

    pub fn predict(&self, features: &RealMatrix) -> Result<Vec<usize>> {
        Ok(self.forward(features)?.predictions())
    }

    pub fn training_loss(&self, features: &RealMatrix, targets: &[usize]) -> Result<f64> {
        self.check_targets(features, targets)?;
        let probs = self.training_probabilities(features)?;
        let loss = separate_log_loss(&probs, targets);
        if log::log_enabled!(log::Level::Debug) {
            let fused = self.training_loss_fused(features, targets)?;
            log::debug!(
                "{} loss: separate = {loss:.17e}, fused = {fused:.17e}, diff = {:e}",
                self.kind(),
                loss - fused
            );
        }
        Ok(loss)
    }

    /// The same loss evaluated as a fused log-softmax, for comparison only.
    pub fn training_loss_fused(&self, features: &RealMatrix, targets: &[usize]) -> Result<f64> {
        self.check_targets(features, targets)?;
        let logits = self.forward_logits(features)?;
        let scale = self.training_scale();
        let total: f64 = logits
            .iter_rows()
            .zip(targets)
            .map(|(row, &t)| log_sum_exp(row, scale) - scale * row[t])
            .sum();
        Ok(total / targets.len() as f64)
    }

    /// Exact gradients of the mean batch loss.
    pub fn backward(&self, features: &RealMatrix, targets: &[usize]) -> Result<HeadGradients> {
        self.check_targets(features, targets)?;
        let out = self.forward(features)?;
        let scale = self.training_scale();
        let probs = stable_softmax_rows(&out.logits, scale);
        let loss = separate_log_loss(&probs, targets);
        let g = logit_gradient(&probs, targets, scale);

        let (d_features, params) = match self {
            ClassifierHead::SoftMax(h) => {
                let d_weights = g.transpose_matmul(features)?;
                let d_bias = g.column_sums();
                let d_features = g.matmul(&h.weights)?;
                (d_features, ParamGradients::SoftMax { d_weights, d_bias })
            }
            ClassifierHead::IsoMax(h) => {
                let distances = out.distances.as_ref().expect("distance head");
                // ∂L/∂D = −G
                let d_dist = g.map(|v| -v);
                let (d_features, d_prototypes) =
                    distance_backward(features, &h.prototypes, distances, &d_dist);
                (d_features, ParamGradients::IsoMax { d_prototypes })
            }
            ClassifierHead::IsoMaxPlus(h) => {
                let distances = out.distances.as_ref().expect("distance head");
                let a = h.effective_distance_scale();
                let d_dist = g.map(|v| -a * v);
                let f_hat = row_normalize(features, NORM_EPS);
                let p_hat = row_normalize(&h.prototypes, NORM_EPS);
                let (d_f_hat, d_p_hat) = distance_backward(&f_hat, &p_hat, distances, &d_dist);
                let d_features = normalize_backward(features, &f_hat, &d_f_hat);
                let d_prototypes = normalize_backward(&h.prototypes, &p_hat, &d_p_hat);

                let d_abs: f64 = -g
                    .data()
                    .iter()
                    .zip(distances.data())
                    .map(|(gv, dv)| gv * dv)
                    .sum::<f64>();
                let d_distance_scale = if h.distance_scale > 0.0 {
                    d_abs
                } else if h.distance_scale < 0.0 {
                    -d_abs
                } else {
                    0.0
                };
                (
                    d_features,
                    ParamGradients::IsoMaxPlus {
                        d_prototypes,
                        d_distance_scale,
                    },
                )
            }
        };

        Ok(HeadGradients {
            loss,
            d_features,
            params,
        })
    }
}

fn separate_log_loss(probs: &RealMatrix, targets: &[usize]) -> f64 {
    let total: f64 = probs
        .iter_rows()
        .zip(targets)
        .map(|(row, &t)| -row[t].max(PROBABILITY_FLOOR).ln())
        .sum();
    total / targets.len() as f64
}

/// ∂(mean loss)/∂logits. Rows whose target probability sits below the floor
/// have a constant loss and therefore a zero gradient.
pub(crate) fn logit_gradient(probs: &RealMatrix, targets: &[usize], scale: f64) -> RealMatrix {
    let n = targets.len() as f64;
    let mut g = probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        let row = g.row_mut(i);
        if row[t] < PROBABILITY_FLOOR {
            row.fill(0.0);
            continue;
        }
        row[t] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale / n);
    }
    g
}

/// Back-propagates `∂L/∂D` through `D_ij = ‖a_i − b_j‖`.
fn distance_backward(
    a: &RealMatrix,
    b: &RealMatrix,
    distances: &RealMatrix,
    d_dist: &RealMatrix,
) -> (RealMatrix, RealMatrix) {
    let mut d_a = RealMatrix::zeros(a.rows(), a.cols());
    let mut d_b = RealMatrix::zeros(b.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let w = d_dist.get(i, j) / distances.get(i, j).max(DISTANCE_FLOOR);
            if w == 0.0 {
                continue;
            }
            for k in 0..a.cols() {
                let diff = w * (a.get(i, k) - b.get(j, k));
                d_a.row_mut(i)[k] += diff;
                d_b.row_mut(j)[k] -= diff;
            }
        }
    }
    (d_a, d_b)
}

/// Back-propagates through `v̂ = v / ‖v‖`: `(g − v̂ (v̂·g)) / ‖v‖`. Rows whose
/// norm falls under the guard get a zero gradient.
fn normalize_backward(raw: &RealMatrix, normed: &RealMatrix, upstream: &RealMatrix) -> RealMatrix {
    let mut out = RealMatrix::zeros(raw.rows(), raw.cols());
    for i in 0..raw.rows() {
        let norm = l2_norm(raw.row(i));
        if norm < NORM_EPS {
            continue;
        }
        let v_hat = normed.row(i);
        let g = upstream.row(i);
        let proj: f64 = v_hat.iter().zip(g).map(|(a, b)| a * b).sum();
        for (o, (gk, vk)) in out.row_mut(i).iter_mut().zip(g.iter().zip(v_hat)) {
            *o = (gk - vk * proj) / norm;
        }
    }
    out
}
