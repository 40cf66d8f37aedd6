//! Evaluation harness: detection metrics with Anomaly as the positive class, Joint Exact
//! Match for localization, and per-domain breakdowns.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ratio::{exact, to_f64, Exact};
use crate::trajectory::{AnomalyLabel, Dataset, Domain, Verdict};
use crate::verifier::DiagnosticReport;

mod predictions;
pub mod similarity;
mod table;

pub use predictions::{read_predictions, write_predictions, Prediction, PredictionsError};
pub use similarity::{sequence_similarity, similarity_with, MatchingBlock, SimilarityOptions};
pub use table::{render_domain_table, render_table};

/// Default similarity threshold for Joint Exact Match.
pub const DEFAULT_TAU: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("predictions ({preds}) and ground truths ({gts}) differ in length")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("no verdicts to score")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, pred: Verdict, gt: Verdict) {
        match (pred, gt) {
            (Verdict::Anomaly, Verdict::Anomaly) => self.tp += 1,
            (Verdict::Anomaly, Verdict::Normal) => self.fp += 1,
            (Verdict::Normal, Verdict::Normal) => self.tn += 1,
            (Verdict::Normal, Verdict::Anomaly) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `tp / (tp + fp)`, zero when nothing was predicted anomalous.
    pub fn precision(&self) -> Exact {
        exact(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, zero when there are no anomalous ground truths.
    pub fn recall(&self) -> Exact {
        exact(self.tp, self.tp + self.fn_)
    }

    /// Mean of the per-class F1 scores over the classes that occur in predictions or
    /// ground truth.
    pub fn macro_f1(&self) -> Exact {
        let anomaly_support = self.tp + self.fp + self.fn_;
        let normal_support = self.tn + self.fp + self.fn_;
        let mut scores = Vec::with_capacity(2);
        if anomaly_support > 0 {
            scores.push(exact(2 * self.tp, 2 * self.tp + self.fp + self.fn_));
        }
        if normal_support > 0 {
            scores.push(exact(2 * self.tn, 2 * self.tn + self.fp + self.fn_));
        }
        if scores.is_empty() {
            return Exact::from_integer(0);
        }
        let n = scores.len() as u64;
        scores.into_iter().fold(Exact::from_integer(0), |acc, s| acc + s) / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub counts: Confusion,
}

pub fn classification_metrics(
    preds: &[Verdict],
    gts: &[Verdict],
) -> Result<ClassificationMetrics, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = Confusion::default();
    for (&p, &g) in preds.iter().zip(gts) {
        counts.record(p, g);
    }
    Ok(ClassificationMetrics {
        precision: to_f64(&counts.precision()),
        recall: to_f64(&counts.recall()),
        macro_f1: to_f64(&counts.macro_f1()),
        counts,
    })
}

/// Whether the predicted step equals the ground-truth step exactly.
pub fn localization_match(pred: &DiagnosticReport, gt: &AnomalyLabel) -> bool {
    gt.verdict == Verdict::Anomaly
        && pred.verdict == Verdict::Anomaly
        && pred.error_step.is_some()
        && pred.error_step == gt.first_error_step
}

/// 1 iff the verdict is Anomaly, the step matches, and the content similarity is strictly
/// greater than `tau`. Absent fields score 0.
pub fn joint_exact_match(
    pred: &DiagnosticReport,
    gt: &AnomalyLabel,
    tau: f64,
    options: SimilarityOptions,
) -> u8 {
    if !localization_match(pred, gt) {
        return 0;
    }
    match (&pred.error_content, &gt.error_content) {
        (Some(p), Some(g)) if similarity_with(p, g, options) > tau => 1,
        _ => 0,
    }
}

/// Raw tallies behind a set of scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub counts: Confusion,
    pub anomaly_ground_truths: u64,
    pub jem_hits: u64,
    pub localization_hits: u64,
}

impl Tally {
    pub fn jem(&self) -> Exact {
        exact(self.jem_hits, self.anomaly_ground_truths)
    }

    pub fn localization_only_match(&self) -> Exact {
        exact(self.localization_hits, self.anomaly_ground_truths)
    }

    pub fn scores(&self) -> Scores {
        Scores {
            precision: to_f64(&self.counts.precision()),
            recall: to_f64(&self.counts.recall()),
            macro_f1: to_f64(&self.counts.macro_f1()),
            jem: to_f64(&self.jem()),
            localization_only_match: to_f64(&self.localization_only_match()),
            n: self.counts.total(),
        }
    }

    pub fn exact_scores(&self) -> ExactScores {
        ExactScores {
            precision: self.counts.precision(),
            recall: self.counts.recall(),
            macro_f1: self.counts.macro_f1(),
            jem: self.jem(),
            localization_only_match: self.localization_only_match(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactScores {
    pub precision: Exact,
    pub recall: Exact,
    pub macro_f1: Exact,
    pub jem: Exact,
    pub localization_only_match: Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub jem: f64,
    pub localization_only_match: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub jem: f64,
    /// Share of anomalous ground truths whose step was matched, ignoring content.
    pub localization_only_match: f64,
    pub counts: Confusion,
    pub tally: Tally,
    pub per_domain: BTreeMap<Domain, Scores>,
    /// Dataset ids without a report; scored as predicted Normal.
    pub missing_reports: Vec<String>,
    pub tau: f64,
    pub normalized_similarity: bool,
}

impl MetricsReport {
    pub fn exact_scores(&self) -> ExactScores {
        self.tally.exact_scores()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tau: f64,
    pub similarity: SimilarityOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tau: DEFAULT_TAU,
            similarity: SimilarityOptions::default(),
        }
    }
}

/// Scores a set of diagnostic reports against a labeled dataset.
pub fn evaluate(
    dataset: &Dataset,
    reports: &HashMap<String, DiagnosticReport>,
    options: EvalOptions,
) -> MetricsReport {
    let missing_default = DiagnosticReport::normal(String::new());
    let mut overall = Tally::default();
    let mut by_domain: BTreeMap<Domain, Tally> = BTreeMap::new();
    let mut missing = Vec::new();

    for item in dataset.items() {
        let report = match reports.get(item.id()) {
            Some(r) => r,
            None => {
                missing.push(item.id().to_string());
                &missing_default
            }
        };
        let gt = &item.label;
        let domain = by_domain.entry(item.trajectory.domain).or_default();
        for tally in [&mut overall, domain] {
            tally.counts.record(report.verdict, gt.verdict);
            if gt.verdict == Verdict::Anomaly {
                tally.anomaly_ground_truths += 1;
                if localization_match(report, gt) {
                    tally.localization_hits += 1;
                }
                tally.jem_hits +=
                    u64::from(joint_exact_match(report, gt, options.tau, options.similarity));
            }
        }
    }
    missing.sort();

    let scores = overall.scores();
    MetricsReport {
        precision: scores.precision,
        recall: scores.recall,
        macro_f1: scores.macro_f1,
        jem: scores.jem,
        localization_only_match: scores.localization_only_match,
        counts: overall.counts,
        tally: overall,
        per_domain: by_domain.into_iter().map(|(d, t)| (d, t.scores())).collect(),
        missing_reports: missing,
        tau: options.tau,
        normalized_similarity: options.similarity.normalize,
    }
}
