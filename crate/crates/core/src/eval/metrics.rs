//! Recording-level classification, threshold metrics and AUCs.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    FP,
    TN,
    FN,
}

/// One oracle's verdict on one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub recording_id: String,
    pub oracle_id: String,
    /// Max smoothed score over the recording.
    pub recording_score: f64,
    pub first_alarm_frame: Option<usize>,
}

impl OracleVerdict {
    pub fn alarmed(&self) -> bool {
        self.first_alarm_frame.is_some()
    }
}

/// What `classify` needs to know about a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordingFacts {
    pub positive: bool,
    pub onset_frame: Option<usize>,
    pub oob_frame: Option<usize>,
}

/// Alarms on positives count only at or before `oob - reaction_frames`;
/// with `strict_onset` they must also be at or after the anomaly onset.
/// Positives without an out-of-bounds frame are excluded (`None`).
pub fn classify(alarm: Option<usize>, facts: &RecordingFacts, reaction_frames: usize, strict_onset: bool) -> Option<Outcome> {
    if !facts.positive {
        return Some(if alarm.is_some() { Outcome::FP } else { Outcome::TN });
    }
    let oob = facts.oob_frame?;
    let hit = alarm.is_some_and(|a| {
        a + reaction_frames <= oob && !(strict_onset && facts.onset_frame.is_some_and(|on| a < on))
    });
    Some(if hit { Outcome::TP } else { Outcome::FN })
}

/// First alarm frame among frames allowed to count for a reaction window.
pub fn first_alarm_in_window(smoothed: &[f64], threshold: f64, last_frame: Option<usize>) -> Option<usize> {
    let end = last_frame.map_or(smoothed.len(), |l| (l + 1).min(smoothed.len()));
    smoothed[..end].iter().position(|&s| s > threshold)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::TP => self.tp += 1,
            Outcome::FP => self.fp += 1,
            Outcome::TN => self.tn += 1,
            Outcome::FN => self.r#fn += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fpr: f64,
    pub precision: f64,
    pub tpr: f64,
    pub f1: f64,
    /// Set when some denominator was zero and the value was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let mut degenerate = false;
    let fpr = ratio(c.fp, c.fp + c.tn, &mut degenerate);
    let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
    let tpr = ratio(c.tp, c.tp + c.r#fn, &mut degenerate);
    let f1 = if precision + tpr > 0.0 {
        2.0 * precision * tpr / (precision + tpr)
    } else {
        degenerate = true;
        0.0
    };
    Metrics {
        fpr,
        precision,
        tpr,
        f1,
        degenerate,
    }
}

/// `(auc_roc, auc_prc)` from a sweep over all distinct scores (descending,
/// ties in one step) with trapezoidal integration. The PR curve starts at
/// recall 0 with the precision of the first step.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<(f64, f64), EvalError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::EmptyClass);
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut roc, mut prc) = (0.0, 0.0);
    let (mut prev_fpr, mut prev_tpr) = (0.0, 0.0);
    let mut prev_prec: Option<f64> = None;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / np;
        let fpr = fp as f64 / nn;
        let prec = tp as f64 / (tp + fp) as f64;
        roc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        let start = prev_prec.unwrap_or(prec);
        prc += (tpr - prev_tpr) * (prec + start) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
        prev_prec = Some(prec);
    }
    Ok((roc, prc))
}
