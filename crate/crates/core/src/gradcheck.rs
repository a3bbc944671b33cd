//! Central finite-difference verification of the hand-derived gradients.
//!
//! Each check perturbs one scalar at a time in a cloned model and evaluates
//! the forward loss only, so it shares nothing with the backward code beyond
//! the loss definition itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::heads::{
    ClassifierHead, HeadKind, IsoMaxHead, IsoMaxPlusHead, LabeledBatch, SoftMaxHead,
};
use crate::model::{MlpBackbone, TrainState};
use crate::numerics::RealMatrix;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Magnitude below which errors are measured against this floor instead of
/// the derivative itself. A central difference of a loss `L` carries rounding
/// noise of about `ε·|L|/h`, roughly 1e-10 for the losses sampled here, so
/// components smaller than noise / TOLERANCE = 1e-6 cannot be resolved to
/// TOLERANCE; the floor sits one decade above that.
pub const RELATIVE_FLOOR: f64 = 1e-5;

pub const MAX_ROWS: usize = 8;
pub const MAX_DIM: usize = 5;
pub const MAX_CLASSES: usize = 4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

pub fn central_difference(x: f64, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub target: String,
    pub instances: usize,
    pub entries_checked: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= TOLERANCE
    }
}

#[derive(Default)]
struct Tally {
    entries: usize,
    worst: f64,
    worst_abs: f64,
}

impl Tally {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        let e = relative_error(analytic, numeric);
        self.worst_abs = self.worst_abs.max((analytic - numeric).abs());
        if e > self.worst || e.is_nan() {
            self.worst = if e.is_nan() { f64::INFINITY } else { e };
        }
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A head with every parameter randomised (IsoMax prototypes included, so
/// the instance is not stuck at its uniform starting point).
fn random_head(kind: HeadKind, dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> ClassifierHead {
    match kind {
        HeadKind::SoftMax => ClassifierHead::SoftMax(SoftMaxHead {
            weights: normal_matrix(rng, classes, dim),
            bias: (0..classes).map(|_| rng.sample(StandardNormal)).collect(),
        }),
        HeadKind::IsoMax => ClassifierHead::IsoMax(IsoMaxHead {
            prototypes: normal_matrix(rng, classes, dim),
            entropic_scale: crate::heads::DEFAULT_ENTROPIC_SCALE,
        }),
        HeadKind::IsoMaxPlus => {
            let magnitude = rng.random_range(0.25..2.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            ClassifierHead::IsoMaxPlus(IsoMaxPlusHead {
                prototypes: normal_matrix(rng, classes, dim),
                distance_scale: sign * magnitude,
                entropic_scale: crate::heads::DEFAULT_ENTROPIC_SCALE,
            })
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..=MAX_ROWS),
        rng.random_range(1..=MAX_DIM),
        rng.random_range(1..=MAX_CLASSES),
    )
}

fn random_targets(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Checks ∂loss/∂features and every head parameter for one head kind.
pub fn check_head(kind: HeadKind, instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for _ in 0..instances {
        let (n, d, c) = random_shape(&mut rng);
        let head = random_head(kind, d, c, &mut rng);
        let features = uniform_matrix(&mut rng, n, d);
        let targets = random_targets(&mut rng, n, c);
        let grads = head.backward(&features, &targets)?;

        for idx in 0..features.data().len() {
            let x0 = features.data()[idx];
            let numeric = central_difference(x0, STEP, |x| {
                let mut f = features.clone();
                f.data_mut()[idx] = x;
                head.training_loss(&f, &targets).expect("valid instance")
            });
            tally.record(grads.d_features.data()[idx], numeric);
        }

        let analytic = grads.params.as_slices();
        let shapes: Vec<usize> = head.parameters().iter().map(|p| p.len()).collect();
        for (t, &len) in shapes.iter().enumerate() {
            for idx in 0..len {
                let x0 = head.parameters()[t][idx];
                let numeric = central_difference(x0, STEP, |x| {
                    let mut h = head.clone();
                    h.parameters_mut()[t][idx] = x;
                    h.training_loss(&features, &targets)
                        .expect("valid instance")
                });
                tally.record(analytic[t][idx], numeric);
            }
        }
    }
    Ok(GradCheckReport {
        target: format!("{kind} head"),
        instances,
        entries_checked: tally.entries,
        max_relative_error: tally.worst,
        max_absolute_error: tally.worst_abs,
    })
}

/// Checks every backbone weight and bias through a full backbone + head loss.
pub fn check_backbone(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for i in 0..instances {
        let (n, d_in, c) = random_shape(&mut rng);
        let depth = rng.random_range(1..=3);
        let mut widths = vec![d_in];
        widths.extend((0..depth).map(|_| rng.random_range(1..=MAX_DIM)));
        let backbone = MlpBackbone::init(&widths, &mut rng)?;
        let kind = HeadKind::ALL[i % HeadKind::ALL.len()];
        let head = random_head(kind, backbone.feature_dim(), c, &mut rng);
        let state = TrainState::new(backbone, head, 0)?;
        let inputs = uniform_matrix(&mut rng, n, d_in);
        let targets = random_targets(&mut rng, n, c);
        let batch = LabeledBatch::new(inputs, targets)?;
        let (_, grads, _) = state.loss_and_gradients(&batch)?;

        let loss_of = |s: &TrainState| -> f64 {
            let f = s.backbone.forward(&batch.features).expect("valid instance");
            s.head
                .training_loss(&f, &batch.targets)
                .expect("valid instance")
        };
        let tensors = state.backbone.parameters().len();
        for t in 0..tensors {
            let len = state.backbone.parameters()[t].len();
            for idx in 0..len {
                let x0 = state.backbone.parameters()[t][idx];
                let numeric = central_difference(x0, STEP, |x| {
                    let mut s = state.clone();
                    s.backbone.parameters_mut()[t][idx] = x;
                    loss_of(&s)
                });
                tally.record(grads[t][idx], numeric);
            }
        }
    }
    Ok(GradCheckReport {
        target: "mlp backbone".into(),
        instances,
        entries_checked: tally.entries,
        max_relative_error: tally.worst,
        max_absolute_error: tally.worst_abs,
    })
}

/// All three heads and the backbone, each over `instances` seeded instances.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = HeadKind::ALL
        .into_iter()
        .enumerate()
        .map(|(i, kind)| check_head(kind, instances, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    reports.push(check_backbone(
        instances,
        seed.wrapping_add(HeadKind::ALL.len() as u64),
    )?);
    Ok(reports)
}
