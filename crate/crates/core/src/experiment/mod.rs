//! Config-driven training and evaluation across seeds.
//!
//! A run trains one model per seed on the training part of a seeded split,
//! then scores the validation rows (in-distribution) against every OOD set.
//! OOD data is loaded separately and only ever reaches evaluation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod report;

use std::time::Instant;

use rayon::prelude::*;

use crate::data::{split_and_batch, Split};
use crate::error::{Error, Result};
use crate::heads::ClassifierHead;
use crate::metrics::{classification_accuracy, detection_metrics, DetectionScoreSet};
use crate::model::{EpochRecord, TrainState};
use crate::scores::{Evaluation, ScoreKind};

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, InDistributionSpec, OodSource, OodSpec, PreparedData};
pub use report::{
    compare_heads, ComparisonReport, DetectionResult, Histogram, MeanStd, Report, RunStatus,
    SeedRun,
};

/// Data and split shared by every seed of one config.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub data: PreparedData,
    pub split: Split,
}

impl Workspace {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let data = cfg.prepare_data()?;
        let split = split_and_batch(
            &data.in_distribution,
            cfg.val_fraction,
            cfg.sgd.batch_size,
            cfg.split_seed,
        )?;
        if split.val.is_empty() || split.train.is_empty() {
            return Err(Error::Config(format!(
                "val_fraction {} leaves an empty train or validation set",
                cfg.val_fraction
            )));
        }
        Ok(Self { data, split })
    }
}

/// Trains a fresh model for `seed` on the training split only.
pub fn train_seed(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    seed: u64,
) -> Result<(TrainState, Vec<EpochRecord>)> {
    let mut state = TrainState::init(
        &cfg.widths,
        cfg.head,
        ws.data.in_distribution.class_count,
        cfg.entropic_scale,
        seed,
    )?;
    let trace = state.fit(&ws.split.train, &cfg.sgd, |r| {
        log::debug!(
            "seed {seed} epoch {} lr {:.4} loss {:.5} acc {:.4}",
            r.epoch,
            r.learning_rate,
            r.mean_loss,
            r.train_accuracy
        );
    })?;
    Ok((state, trace))
}

/// Validation accuracy and every (OOD set, score) detection result for a
/// trained state.
pub fn evaluate_state(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    state: &TrainState,
) -> Result<SeedRun> {
    let val = &ws.split.val;
    let val_eval = Evaluation::new(&state.head, &state.features(&val.inputs)?)?;
    let val_accuracy = classification_accuracy(&val_eval.predictions, val.targets()?)?;
    let in_scores: Vec<(ScoreKind, Vec<f64>)> = cfg
        .scores
        .iter()
        .map(|&k| val_eval.score(k).map(|s| (k, s)))
        .collect::<Result<_>>()?;

    let mut detection = Vec::new();
    let mut score_sets = Vec::new();
    for (name, ood) in &ws.data.ood {
        let ood_eval = Evaluation::new(&state.head, &state.features(&ood.inputs)?)?;
        for (kind, ins) in &in_scores {
            let set = DetectionScoreSet::new(ins.clone(), ood_eval.score(*kind)?)?;
            let m = detection_metrics(&set)?;
            detection.push(DetectionResult {
                ood: name.clone(),
                score: *kind,
                auroc: m.auroc,
                tnr_at_tpr95: m.tnr_at_tpr95,
                dtacc: m.dtacc,
            });
            score_sets.push((name.clone(), *kind, set));
        }
    }
    let distance_scale = match &state.head {
        ClassifierHead::IsoMaxPlus(h) => Some(h.distance_scale),
        _ => None,
    };
    Ok(SeedRun {
        seed: state.seed,
        status: RunStatus::Completed,
        error: None,
        epochs_completed: state.epoch,
        final_train_loss: None,
        val_accuracy: Some(val_accuracy),
        distance_scale,
        detection,
        score_sets,
    })
}

/// Everything a run produced, including the trained states (`None` for a
/// diverged seed) for callers that want checkpoints or histograms.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: Report,
    pub workspace: Workspace,
    pub states: Vec<Option<TrainState>>,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let started = Instant::now();
    let ws = Workspace::new(cfg)?;
    let per_seed: Vec<Result<(SeedRun, Option<TrainState>)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| match train_seed(cfg, &ws, seed) {
            Ok((state, trace)) => {
                let mut run = evaluate_state(cfg, &ws, &state)?;
                run.final_train_loss = trace.last().map(|r| r.mean_loss);
                Ok((run, Some(state)))
            }
            Err(e @ Error::TrainingDiverged { .. }) => {
                log::warn!("seed {seed}: {e}");
                Ok((
                    SeedRun {
                        seed,
                        status: RunStatus::Diverged,
                        error: Some(e.to_string()),
                        epochs_completed: 0,
                        final_train_loss: None,
                        val_accuracy: None,
                        distance_scale: None,
                        detection: Vec::new(),
                        score_sets: Vec::new(),
                    },
                    None,
                ))
            }
            Err(e) => Err(e),
        })
        .collect();
    let mut runs = Vec::with_capacity(per_seed.len());
    let mut states = Vec::with_capacity(per_seed.len());
    for r in per_seed {
        let (run, state) = r?;
        runs.push(run);
        states.push(state);
    }
    let report = Report::new(cfg, runs, started.elapsed().as_secs_f64());
    Ok(ExperimentOutcome {
        report,
        workspace: ws,
        states,
    })
}

/// Trains and evaluates every configured seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    execute(cfg).map(|o| o.report)
}

/// Entropy and (for distance heads) minimum-distance histograms of the
/// validation rows against one OOD set.
pub fn histogram_report(
    state: &TrainState,
    in_inputs: &crate::numerics::RealMatrix,
    ood_inputs: &crate::numerics::RealMatrix,
    bins: usize,
) -> Result<(Histogram, Option<Histogram>)> {
    let ins = Evaluation::new(&state.head, &state.features(in_inputs)?)?;
    let outs = Evaluation::new(&state.head, &state.features(ood_inputs)?)?;
    let entropy = Histogram::build("entropy", &ins.entropies()?, &outs.entropies()?, bins)?;
    let distance = match (ins.output.min_distances(), outs.output.min_distances()) {
        (Some(a), Some(b)) => Some(Histogram::build("min_distance", &a, &b, bins)?),
        _ => None,
    };
    Ok((entropy, distance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadKind;

    fn small() -> ExperimentConfig {
        let text = r#"
head = "isomaxplus"
widths = [2, 8, 4]
scores = ["min_distance", "entropic", "max_probability"]
seeds = [3, 4]

[sgd]
epochs = 3
decay_epochs = [2]
batch_size = 16

[in_distribution]
kind = "blobs"
classes = 3
dims = 2
radius = 4.0
sigma = 0.5
n_per_class = 30

[[ood]]
name = "ring"
kind = "ring"
inner_radius = 8.0
outer_radius = 12.0
n = 40
seed = 1
"#;
        ExperimentConfig::from_toml_str(text, ".").unwrap()
    }

    #[test]
    fn report_shape() {
        let cfg = small();
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.runs.len(), 2);
        assert_eq!(r.runs[0].seed, 3);
        assert_eq!(r.runs[0].detection.len(), 3);
        assert_eq!(r.summary.completed_seeds, 2);
        assert_eq!(r.summary.detection.len(), 3);
        assert!(r.runs.iter().all(|x| x.distance_scale.is_some()));
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn reruns_are_identical_apart_from_timing() {
        let cfg = small();
        let a = run_experiment(&cfg).unwrap().to_json_untimed().unwrap();
        let b = run_experiment(&cfg).unwrap().to_json_untimed().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ood_data_does_not_touch_training() {
        let cfg = small();
        let mut other = cfg.clone();
        if let OodSource::Ring { seed, n, .. } = &mut other.ood[0].source {
            *seed = 99;
            *n = 7;
        }
        let ws_a = Workspace::new(&cfg).unwrap();
        let ws_b = Workspace::new(&other).unwrap();
        let (a, _) = train_seed(&cfg, &ws_a, 3).unwrap();
        let (b, _) = train_seed(&other, &ws_b, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_recorded_per_seed() {
        let mut cfg = small();
        cfg.head = HeadKind::SoftMax;
        cfg.scores = vec![ScoreKind::Entropic];
        cfg.sgd.learning_rate = 1e200;
        cfg.sgd.weight_decay = 0.0;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.runs.iter().all(|x| x.status == RunStatus::Diverged));
        assert_eq!(r.warnings.len(), 2);
        assert_eq!(r.summary.completed_seeds, 0);
        assert!(r.summary.val_accuracy.is_none());
    }

    #[test]
    fn untrained_isomax_has_flat_entropy() {
        let mut cfg = small();
        cfg.head = HeadKind::IsoMax;
        let ws = Workspace::new(&cfg).unwrap();
        let state = TrainState::init(&cfg.widths, HeadKind::IsoMax, 3, 10.0, 0).unwrap();
        let (h, d) =
            histogram_report(&state, &ws.split.val.inputs, &ws.data.ood[0].1.inputs, 10).unwrap();
        assert_eq!(h.bins.len(), 1);
        assert!((h.bins[0].bin_left + 0.5 - 3f64.ln()).abs() < 1e-12);
        assert!(d.is_some());
    }
}
