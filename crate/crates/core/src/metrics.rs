//! Detection metrics over in-distribution (positive) and OOD (negative)
//! score sets, plus plain classification accuracy.
//!
//! Thresholds follow one rule: an example is called in-distribution iff its
//! score is strictly greater than the threshold δ. Candidate thresholds are
//! the distinct observed scores plus ±∞, which is enough for exact optima.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Required TPR for [`tnr_at_tpr95`], as a ratio of integers so the
/// comparison `hits / n ≥ 0.95` is exact.
const TPR_NUM: usize = 19;
const TPR_DEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScoreSet {
    pub in_scores: Vec<f64>,
    pub out_scores: Vec<f64>,
}

impl DetectionScoreSet {
    pub fn new(in_scores: Vec<f64>, out_scores: Vec<f64>) -> Result<Self> {
        let set = Self {
            in_scores,
            out_scores,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_scores.is_empty() || self.out_scores.is_empty() {
            return Err(Error::contract(
                "detection metrics need non-empty in and out groups",
            ));
        }
        if self
            .in_scores
            .iter()
            .chain(&self.out_scores)
            .any(|v| !v.is_finite())
        {
            return Err(Error::contract("detection scores must be finite"));
        }
        Ok(())
    }

    /// Swaps the roles of the two groups.
    pub fn swapped(&self) -> Self {
        Self {
            in_scores: self.out_scores.clone(),
            out_scores: self.in_scores.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub auroc: f64,
    pub tnr_at_tpr95: f64,
    pub dtacc: f64,
}

pub fn detection_metrics(s: &DetectionScoreSet) -> Result<DetectionMetrics> {
    Ok(DetectionMetrics {
        auroc: auroc(s)?,
        tnr_at_tpr95: tnr_at_tpr95(s)?,
        dtacc: dtacc(s)?,
    })
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    out
}

/// Mann–Whitney AUROC: the fraction of (in, out) pairs where the in score is
/// larger, counting ties as one half. O((n + m) log(n + m)).
pub fn auroc(s: &DetectionScoreSet) -> Result<f64> {
    s.validate()?;
    let outs = sorted(&s.out_scores);
    // twice the pair credit, kept integral so the result is exact
    let mut doubled: u64 = 0;
    for &v in &s.in_scores {
        let below = outs.partition_point(|&o| o < v);
        let not_above = outs.partition_point(|&o| o <= v);
        doubled += 2 * below as u64 + (not_above - below) as u64;
    }
    let pairs = (s.in_scores.len() * s.out_scores.len()) as f64;
    Ok((doubled as f64 / 2.0) / pairs)
}

/// TNR at the largest threshold whose TPR is still at least 95%.
pub fn tnr_at_tpr95(s: &DetectionScoreSet) -> Result<f64> {
    s.validate()?;
    let ins = sorted(&s.in_scores);
    let n = ins.len();
    // smallest k with k / n ≥ 0.95
    let k = (TPR_NUM * n).div_ceil(TPR_DEN);
    // #{in > δ} ≥ k  ⇔  δ < (k-th largest in score); the best candidate δ is
    // the largest observed score below that pivot, so every out score below
    // the pivot is a true negative.
    let pivot = ins[n - k];
    let negatives = s.out_scores.iter().filter(|&&o| o < pivot).count();
    Ok(negatives as f64 / s.out_scores.len() as f64)
}

/// Detection error at a threshold with equal class priors.
#[inline]
pub fn balanced_detection_error(
    in_at_or_below: usize,
    n_in: usize,
    out_above: usize,
    n_out: usize,
) -> f64 {
    0.5 * (in_at_or_below as f64 / n_in as f64) + 0.5 * (out_above as f64 / n_out as f64)
}

/// `1 − min_δ balanced error`, swept over every candidate threshold.
pub fn dtacc(s: &DetectionScoreSet) -> Result<f64> {
    s.validate()?;
    let ins = sorted(&s.in_scores);
    let outs = sorted(&s.out_scores);
    let (n, m) = (ins.len(), outs.len());

    // δ = −∞: no in at or below, every out above
    let mut best = balanced_detection_error(0, n, m, m);
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let next = match (ins.get(i), outs.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < n && ins[i] <= next {
            i += 1;
        }
        while j < m && outs[j] <= next {
            j += 1;
        }
        best = best.min(balanced_detection_error(i, n, m - j, m));
    }
    // δ = +∞ gives error 0.5, which the sweep's final step already reached
    Ok(1.0 - best)
}

pub fn classification_accuracy(predictions: &[usize], targets: &[usize]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} predictions but {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::contract("accuracy over an empty set"));
    }
    let hits = predictions
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / targets.len() as f64)
}
