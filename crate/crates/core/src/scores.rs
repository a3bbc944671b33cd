//! Per-example detection scores. Every score follows one convention: a
//! larger value means the example looks more in-distribution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{ClassifierHead, HeadKind, HeadOutput};
use crate::numerics::{check_probability_row, shannon_entropy_row, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    MaxProbability,
    Entropic,
    MinDistance,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [
        ScoreKind::MaxProbability,
        ScoreKind::Entropic,
        ScoreKind::MinDistance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::MaxProbability => "max_probability",
            ScoreKind::Entropic => "entropic",
            ScoreKind::MinDistance => "min_distance",
        }
    }

    /// Short column tag used in comparison tables (MPS/ES/MDS).
    pub fn abbrev(self) -> &'static str {
        match self {
            ScoreKind::MaxProbability => "MPS",
            ScoreKind::Entropic => "ES",
            ScoreKind::MinDistance => "MDS",
        }
    }

    pub fn supported_by(self, head: HeadKind) -> bool {
        self != ScoreKind::MinDistance || head.is_distance_based()
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown score kind {s:?}")))
    }
}

pub fn max_probability_score(probs: &RealMatrix) -> Result<Vec<f64>> {
    probs
        .iter_rows()
        .map(|row| {
            check_probability_row(row)?;
            Ok(row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        })
        .collect()
}

/// Negative Shannon entropy of each row.
pub fn entropic_score(probs: &RealMatrix) -> Result<Vec<f64>> {
    probs
        .iter_rows()
        .map(|row| shannon_entropy_row(row).map(|h| -h))
        .collect()
}

/// `−min_j distance`, using the unscaled distances of the head's forward
/// pass (normalised for IsoMax+, raw for IsoMax). The distance scale never
/// enters, so the score is identical for heads differing only in `d_s`.
pub fn min_distance_score(head: &ClassifierHead, features: &RealMatrix) -> Result<Vec<f64>> {
    let out = head.forward(features)?;
    min_distance_from_output(&out)
}

pub fn min_distance_from_output(out: &HeadOutput) -> Result<Vec<f64>> {
    out.min_distances()
        .map(|d| d.into_iter().map(|v| -v).collect())
        .ok_or_else(|| Error::contract("minimum distance score needs a distance-based head"))
}

/// Scores and predictions from a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub output: HeadOutput,
    /// Inference probabilities (entropic scale removed).
    pub probabilities: RealMatrix,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn new(head: &ClassifierHead, features: &RealMatrix) -> Result<Self> {
        let output = head.forward(features)?;
        let probabilities = crate::numerics::stable_softmax_rows(&output.logits, 1.0);
        let predictions = output.predictions();
        Ok(Self {
            output,
            probabilities,
            predictions,
        })
    }

    pub fn score(&self, kind: ScoreKind) -> Result<Vec<f64>> {
        match kind {
            ScoreKind::MaxProbability => max_probability_score(&self.probabilities),
            ScoreKind::Entropic => entropic_score(&self.probabilities),
            ScoreKind::MinDistance => min_distance_from_output(&self.output),
        }
    }

    /// Entropy of each inference-probability row, in nats.
    pub fn entropies(&self) -> Result<Vec<f64>> {
        self.probabilities
            .iter_rows()
            .map(shannon_entropy_row)
            .collect()
    }
}
