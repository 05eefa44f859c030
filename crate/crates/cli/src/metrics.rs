//! Recall and false positive rate of REPORT/SKIP verdicts against ground truth.

use std::collections::{HashMap, HashSet};

use difftriage_core::corpus::{Label, LabelVerdict};
use difftriage_oracle::{Decision, Verdict};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{metric} is undefined: {reason}")]
    Undefined {
        metric: &'static str,
        reason: &'static str,
    },

    #[error("no ground-truth label for finding `{0}`")]
    MissingTruth(String),

    #[error("finding `{0}` has more than one verdict")]
    DuplicateVerdict(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }
}

/// TP / (TP + FN).
pub fn recall(c: &ConfusionCounts) -> Result<f64, MetricError> {
    let positives = c.true_positives + c.false_negatives;
    if positives == 0 {
        return Err(MetricError::Undefined {
            metric: "recall",
            reason: "no ground-truth bugs",
        });
    }
    Ok(c.true_positives as f64 / positives as f64)
}

/// FP / (FP + TN).
pub fn false_positive_rate(c: &ConfusionCounts) -> Result<f64, MetricError> {
    let negatives = c.false_positives + c.true_negatives;
    if negatives == 0 {
        return Err(MetricError::Undefined {
            metric: "false positive rate",
            reason: "no ground-truth non-bugs",
        });
    }
    Ok(c.false_positives as f64 / negatives as f64)
}

pub fn round_to(x: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    (x * scale).round() / scale
}

/// Tallies verdicts against labels. Every verdict needs a label; labels
/// without a verdict are ignored.
pub fn confusion(verdicts: &[Verdict], truth: &[Label]) -> Result<ConfusionCounts, MetricError> {
    let truth: HashMap<&str, LabelVerdict> = truth.iter().map(|l| (l.finding_id.as_str(), l.verdict)).collect();
    let mut seen = HashSet::new();
    let mut c = ConfusionCounts::default();
    for v in verdicts {
        if !seen.insert(v.finding_id.as_str()) {
            return Err(MetricError::DuplicateVerdict(v.finding_id.clone()));
        }
        let actual = truth
            .get(v.finding_id.as_str())
            .ok_or_else(|| MetricError::MissingTruth(v.finding_id.clone()))?;
        match (v.decision, actual) {
            (Decision::Report, LabelVerdict::Bug) => c.true_positives += 1,
            (Decision::Report, LabelVerdict::NoBug) => c.false_positives += 1,
            (Decision::Skip, LabelVerdict::NoBug) => c.true_negatives += 1,
            (Decision::Skip, LabelVerdict::Bug) => c.false_negatives += 1,
        }
    }
    Ok(c)
}

/// Contents of `report.json` written by `eval`. Undefined metrics are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub evaluated: u64,
    pub confusion: ConfusionCounts,
    pub recall: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

impl EvalReport {
    /// Metrics are stored to four decimal places.
    pub fn new(confusion: ConfusionCounts) -> Self {
        Self {
            evaluated: confusion.total(),
            confusion,
            recall: recall(&confusion).ok().map(|r| round_to(r, 4)),
            false_positive_rate: false_positive_rate(&confusion).ok().map(|r| round_to(r, 4)),
        }
    }

    /// Human-readable summary, rounded to two places.
    pub fn render(&self) -> String {
        let c = &self.confusion;
        let mut out = format!(
            "evaluated {}: TP {} FP {} TN {} FN {}\n",
            self.evaluated, c.true_positives, c.false_positives, c.true_negatives, c.false_negatives
        );
        match self.recall {
            Some(r) => out.push_str(&format!("recall              {r:.2}\n")),
            None => out.push_str("recall              undefined (no bugs in ground truth)\n"),
        }
        match self.false_positive_rate {
            Some(r) => out.push_str(&format!("false positive rate {r:.2} ({:.0}%)\n", r * 100.0)),
            None => out.push_str("false positive rate undefined (no non-bugs in ground truth)\n"),
        }
        out
    }
}
