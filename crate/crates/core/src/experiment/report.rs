//! Serializable experiment results, cross-head comparison and histograms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::heads::HeadKind;
use crate::metrics::DetectionScoreSet;
use crate::scores::ScoreKind;

pub const SCHEMA_VERSION: u32 = 1;

/// Accuracy loss (as a fraction) beyond which a head is flagged.
pub const ACCURACY_DROP_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub ood: String,
    pub score: ScoreKind,
    pub auroc: f64,
    pub tnr_at_tpr95: f64,
    pub dtacc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub epochs_completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    /// Learned IsoMax+ distance scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_scale: Option<f64>,
    pub detection: Vec<DetectionResult>,
    /// Raw score groups behind `detection`, kept for dumps and plots.
    #[serde(skip)]
    pub score_sets: Vec<(String, ScoreKind, DetectionScoreSet)>,
}

impl SeedRun {
    pub fn result(&self, ood: &str, score: ScoreKind) -> Option<&DetectionResult> {
        self.detection
            .iter()
            .find(|d| d.ood == ood && d.score == score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionAggregate {
    pub ood: String,
    pub score: ScoreKind,
    pub auroc: MeanStd,
    pub tnr_at_tpr95: MeanStd,
    pub dtacc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub completed_seeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<MeanStd>,
    pub detection: Vec<DetectionAggregate>,
}

impl Summary {
    pub fn from_runs(runs: &[SeedRun]) -> Self {
        let ok: Vec<&SeedRun> = runs
            .iter()
            .filter(|r| r.status == RunStatus::Completed)
            .collect();
        let accs: Vec<f64> = ok.iter().filter_map(|r| r.val_accuracy).collect();
        let mut keys: Vec<(String, ScoreKind)> = Vec::new();
        for r in &ok {
            for d in &r.detection {
                if !keys.iter().any(|(o, s)| *o == d.ood && *s == d.score) {
                    keys.push((d.ood.clone(), d.score));
                }
            }
        }
        let detection = keys
            .into_iter()
            .filter_map(|(ood, score)| {
                let hits: Vec<&DetectionResult> =
                    ok.iter().filter_map(|r| r.result(&ood, score)).collect();
                let col = |f: fn(&DetectionResult) -> f64| {
                    MeanStd::of(&hits.iter().map(|d| f(d)).collect::<Vec<_>>())
                };
                Some(DetectionAggregate {
                    auroc: col(|d| d.auroc)?,
                    tnr_at_tpr95: col(|d| d.tnr_at_tpr95)?,
                    dtacc: col(|d| d.dtacc)?,
                    ood,
                    score,
                })
            })
            .collect();
        Self {
            completed_seeds: ok.len(),
            val_accuracy: MeanStd::of(&accs),
            detection,
        }
    }

    pub fn aggregate(&self, ood: &str, score: ScoreKind) -> Option<&DetectionAggregate> {
        self.detection
            .iter()
            .find(|d| d.ood == ood && d.score == score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub head: HeadKind,
    /// Hex form of [`ExperimentConfig::training_hash`].
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// In-distribution detection scores come from the same validation rows
    /// used for accuracy.
    pub in_distribution_rows: String,
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
    pub warnings: Vec<String>,
    pub wall_time_seconds: f64,
}

impl Report {
    pub fn new(config: &ExperimentConfig, runs: Vec<SeedRun>, wall_time_seconds: f64) -> Self {
        let warnings = runs
            .iter()
            .filter_map(|r| {
                r.error
                    .as_ref()
                    .map(|e| format!("seed {} excluded from aggregates: {e}", r.seed))
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            head: config.head,
            config_hash: format!("{:016x}", config.training_hash()),
            config: config.clone(),
            in_distribution_rows: "validation".into(),
            summary: Summary::from_runs(&runs),
            runs,
            warnings,
            wall_time_seconds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with the wall-clock field zeroed, for reproducibility checks.
    pub fn to_json_untimed(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_time_seconds = 0.0;
        r.to_json()
    }

    pub fn primary_score(&self) -> ScoreKind {
        self.config.scores[0]
    }
}

pub fn head_display_name(kind: HeadKind) -> &'static str {
    match kind {
        HeadKind::SoftMax => "SoftMax",
        HeadKind::IsoMax => "IsoMax",
        HeadKind::IsoMaxPlus => "IsoMax+",
    }
}

/// One column of a comparison table: a head paired with the score it is
/// judged by, e.g. `IsoMax+_MDS`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonColumn {
    pub label: String,
    pub head: HeadKind,
    pub score: ScoreKind,
    pub val_accuracy: Option<MeanStd>,
    /// `accuracy − baseline accuracy`, as a fraction.
    pub accuracy_delta: Option<f64>,
    pub accuracy_drop: bool,
    pub detection: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub ood: String,
    pub auroc: MeanStd,
    pub tnr_at_tpr95: MeanStd,
    pub dtacc: MeanStd,
    /// Seeds on which this column's AUROC is at least the baseline's.
    pub auroc_not_below_baseline: usize,
    pub seeds_paired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub baseline: String,
    pub columns: Vec<ComparisonColumn>,
}

fn same_protocol(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.in_distribution == b.in_distribution
        && a.ood == b.ood
        && a.seeds == b.seeds
        && a.val_fraction == b.val_fraction
        && a.split_seed == b.split_seed
        && a.widths == b.widths
        && a.sgd == b.sgd
}

/// Lines up reports that differ only in head (and score), taking the first
/// SoftMax report as the baseline, or the first report if there is none.
pub fn compare_heads(reports: &[Report]) -> Result<ComparisonReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::contract("nothing to compare"))?;
    if let Some(bad) = reports
        .iter()
        .find(|r| !same_protocol(&first.config, &r.config))
    {
        return Err(Error::contract(format!(
            "report for {} uses different data, seeds, backbone or optimiser than {}",
            bad.head, first.head
        )));
    }
    let base = reports
        .iter()
        .find(|r| r.head == HeadKind::SoftMax)
        .unwrap_or(first);
    let base_score = base.primary_score();
    let base_acc = base.summary.val_accuracy.map(|m| m.mean);

    let columns = reports
        .iter()
        .map(|r| {
            let score = r.primary_score();
            let acc = r.summary.val_accuracy;
            let accuracy_delta = acc.zip(base_acc).map(|(a, b)| a.mean - b);
            let detection = r
                .summary
                .detection
                .iter()
                .filter(|d| d.score == score)
                .map(|d| {
                    let (wins, paired) = paired_wins(r, base, &d.ood, score, base_score);
                    ComparisonCell {
                        ood: d.ood.clone(),
                        auroc: d.auroc,
                        tnr_at_tpr95: d.tnr_at_tpr95,
                        dtacc: d.dtacc,
                        auroc_not_below_baseline: wins,
                        seeds_paired: paired,
                    }
                })
                .collect();
            ComparisonColumn {
                label: format!("{}_{}", head_display_name(r.head), score.abbrev()),
                head: r.head,
                score,
                val_accuracy: acc,
                accuracy_delta,
                accuracy_drop: accuracy_delta.is_some_and(|d| -d > ACCURACY_DROP_THRESHOLD),
                detection,
            }
        })
        .collect();
    Ok(ComparisonReport {
        schema_version: SCHEMA_VERSION,
        baseline: format!("{}_{}", head_display_name(base.head), base_score.abbrev()),
        columns,
    })
}

fn paired_wins(
    r: &Report,
    base: &Report,
    ood: &str,
    score: ScoreKind,
    base_score: ScoreKind,
) -> (usize, usize) {
    let mut wins = 0;
    let mut paired = 0;
    for run in r.runs.iter().filter(|x| x.status == RunStatus::Completed) {
        let Some(mine) = run.result(ood, score) else {
            continue;
        };
        let Some(theirs) = base
            .runs
            .iter()
            .find(|b| b.seed == run.seed && b.status == RunStatus::Completed)
            .and_then(|b| b.result(ood, base_score))
        else {
            continue;
        };
        paired += 1;
        if mine.auroc >= theirs.auroc {
            wins += 1;
        }
    }
    (wins, paired)
}

impl ComparisonReport {
    pub fn column(&self, label: &str) -> Option<&ComparisonColumn> {
        self.columns.iter().find(|c| c.label == label)
    }

    /// Plain-text table: one block per OOD set, metrics as rows and heads as
    /// columns, values in percent as `mean ± std`.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = 18;
        let header = |out: &mut String, title: &str| {
            let _ = write!(out, "{title:<14}");
            for c in &self.columns {
                let _ = write!(out, "{:>width$}", c.label);
            }
            out.push('\n');
        };
        let pct = |m: Option<MeanStd>| match m {
            Some(m) => format!("{:.2}±{:.2}", 100.0 * m.mean, 100.0 * m.std),
            None => "n/a".into(),
        };
        header(&mut out, "accuracy");
        let _ = write!(out, "{:<14}", "");
        for c in &self.columns {
            let flag = if c.accuracy_drop { " !" } else { "" };
            let _ = write!(out, "{:>width$}", format!("{}{flag}", pct(c.val_accuracy)));
        }
        out.push('\n');

        let mut oods: Vec<&str> = Vec::new();
        for c in &self.columns {
            for d in &c.detection {
                if !oods.contains(&d.ood.as_str()) {
                    oods.push(&d.ood);
                }
            }
        }
        for ood in oods {
            out.push('\n');
            header(&mut out, &format!("ood: {ood}"));
            let rows: [(&str, fn(&ComparisonCell) -> MeanStd); 3] = [
                ("TNR@TPR95", |c| c.tnr_at_tpr95),
                ("AUROC", |c| c.auroc),
                ("DTACC", |c| c.dtacc),
            ];
            for (name, get) in rows {
                let _ = write!(out, "{name:<14}");
                for c in &self.columns {
                    let cell = c.detection.iter().find(|d| d.ood == ood).map(get);
                    let _ = write!(out, "{:>width$}", pct(cell));
                }
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count_in: usize,
    pub count_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub quantity: String,
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    /// Shared equal-width bins over both groups. When every value is
    /// identical the range collapses, and all counts land in one bin of
    /// width 1 centred on that value.
    pub fn build(
        quantity: impl Into<String>,
        in_values: &[f64],
        out_values: &[f64],
        bins: usize,
    ) -> Result<Self> {
        if bins < 2 {
            return Err(Error::contract("a histogram needs at least 2 bins"));
        }
        let all = in_values.iter().chain(out_values);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::contract("histogram values must be finite"));
        }
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return Err(Error::contract("histogram needs at least one value"));
        }
        let quantity = quantity.into();
        if lo == hi {
            return Ok(Self {
                quantity,
                bins: vec![HistogramBin {
                    bin_left: lo - 0.5,
                    bin_right: lo + 0.5,
                    count_in: in_values.len(),
                    count_out: out_values.len(),
                }],
            });
        }
        let width = (hi - lo) / bins as f64;
        let mut out: Vec<HistogramBin> = (0..bins)
            .map(|i| HistogramBin {
                bin_left: lo + i as f64 * width,
                bin_right: if i + 1 == bins {
                    hi
                } else {
                    lo + (i + 1) as f64 * width
                },
                count_in: 0,
                count_out: 0,
            })
            .collect();
        let index = |v: f64| (((v - lo) / width).floor() as usize).min(bins - 1);
        for &v in in_values {
            out[index(v)].count_in += 1;
        }
        for &v in out_values {
            out[index(v)].count_out += 1;
        }
        Ok(Self {
            quantity,
            bins: out,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for b in &self.bins {
            w.serialize(b)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn total_in(&self) -> usize {
        self.bins.iter().map(|b| b.count_in).sum()
    }

    pub fn total_out(&self) -> usize {
        self.bins.iter().map(|b| b.count_out).sum()
    }
}

/// `score,group` rows for one score set, `group` being `in` or `out`.
pub fn score_dump_csv(set: &DetectionScoreSet) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["score", "group"])?;
    for (group, values) in [("in", &set.in_scores), ("out", &set.out_scores)] {
        for v in values {
            w.write_record([v.to_string().as_str(), group])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_single_and_many() {
        let one = MeanStd::of(&[0.7]).unwrap();
        assert_eq!((one.mean, one.std, one.n), (0.7, 0.0, 1));
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = Histogram::build("x", &[0.0, 0.1, 0.5, 1.0], &[0.9, 1.0, 0.2], 4).unwrap();
        assert_eq!(h.bins.len(), 4);
        assert_eq!(h.total_in(), 4);
        assert_eq!(h.total_out(), 3);
        assert_eq!(h.bins[3].count_in, 1);
        assert_eq!(h.bins[3].count_out, 2);
        assert_eq!(h.bins[0].bin_left, 0.0);
        assert_eq!(h.bins[3].bin_right, 1.0);
    }

    #[test]
    fn degenerate_histogram_uses_one_bin() {
        let v = 2f64.ln();
        let h = Histogram::build("entropy", &[v; 5], &[v; 3], 10).unwrap();
        assert_eq!(h.bins.len(), 1);
        assert_eq!((h.bins[0].count_in, h.bins[0].count_out), (5, 3));
        let csv = h.to_csv().unwrap();
        assert!(csv.starts_with("bin_left,bin_right,count_in,count_out\n"));
    }

    #[test]
    fn histogram_rejects_bad_input() {
        assert!(Histogram::build("x", &[0.0], &[1.0], 1).is_err());
        assert!(Histogram::build("x", &[f64::NAN], &[1.0], 3).is_err());
    }

    #[test]
    fn score_dump_layout() {
        let set = DetectionScoreSet::new(vec![0.5], vec![-1.0, 0.25]).unwrap();
        assert_eq!(
            score_dump_csv(&set).unwrap(),
            "score,group\n0.5,in\n-1,out\n0.25,out\n"
        );
    }
}
