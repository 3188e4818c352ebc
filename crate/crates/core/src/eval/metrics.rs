use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::{LABEL_CODES, NUM_LABELS};

use super::TrackPrediction;

/// Confusion counts and derived scores for one label.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LabelMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Tracks where the label is active.
    pub support: usize,
}

impl LabelMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        LabelMetrics {
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            support: tp + fn_,
        }
    }
}

/// `num / den` with 0/0 taken as 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
    /// `(label index, metrics)` for every label in scope.
    pub per_label: Vec<(usize, LabelMetrics)>,
}

/// All eleven labels.
pub fn all_labels() -> Vec<usize> {
    (0..NUM_LABELS).collect()
}

fn check_scope(scope: &[usize]) -> Result<()> {
    if scope.is_empty() {
        return Err(Error::Evaluation("label scope is empty".into()));
    }
    if let Some(&bad) = scope.iter().find(|&&l| l >= NUM_LABELS) {
        return Err(Error::Evaluation(format!("label index {bad} out of range")));
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfContract(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )))
    }
}

/// Micro/macro F1 over all eleven labels.
pub fn f1_scores(predictions: &[TrackPrediction], threshold: f64) -> Result<F1Scores> {
    f1_scores_over(predictions, threshold, &all_labels())
}

/// Micro/macro F1 restricted to `scope`. A score at or above `threshold`
/// counts as a positive prediction.
pub fn f1_scores_over(predictions: &[TrackPrediction], threshold: f64, scope: &[usize]) -> Result<F1Scores> {
    check_threshold(threshold)?;
    check_scope(scope)?;
    let per_label: Vec<(usize, LabelMetrics)> = scope
        .iter()
        .map(|&l| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for p in predictions {
                match (p.scores[l] >= threshold, p.labels.get(l)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            (l, LabelMetrics::from_counts(tp, fp, fn_))
        })
        .collect();
    let (tp, fp, fn_) = per_label
        .iter()
        .fold((0, 0, 0), |(a, b, c), (_, m)| (a + m.tp, b + m.fp, c + m.fn_));
    let micro = ratio(2 * tp, 2 * tp + fp + fn_);
    let macro_ = per_label.iter().map(|(_, m)| m.f1).sum::<f64>() / per_label.len() as f64;
    Ok(F1Scores {
        micro,
        macro_,
        per_label,
    })
}

/// Label ranking average precision over all eleven labels.
pub fn lrap(predictions: &[TrackPrediction]) -> Result<f64> {
    lrap_over(predictions, &all_labels())
}

/// Label ranking average precision over the labels in `scope`. Ties count
/// against the label being ranked (a label's rank is the number of labels
/// scoring at least as high).
pub fn lrap_over(predictions: &[TrackPrediction], scope: &[usize]) -> Result<f64> {
    check_scope(scope)?;
    if predictions.is_empty() {
        return Err(Error::Evaluation("LRAP of zero tracks".into()));
    }
    let mut total = 0.0;
    for p in predictions {
        let truth: Vec<usize> = scope.iter().copied().filter(|&l| p.labels.get(l)).collect();
        if truth.is_empty() {
            return Err(Error::Evaluation(format!(
                "track {} has no true label",
                p.track_id
            )));
        }
        let mut track = 0.0;
        for &y in &truth {
            let s = p.scores[y];
            let rank = scope.iter().filter(|&&l| p.scores[l] >= s).count();
            let hits = truth.iter().filter(|&&l| p.scores[l] >= s).count();
            track += hits as f64 / rank as f64;
        }
        total += track / truth.len() as f64;
    }
    Ok(total / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_label: Vec<(usize, LabelMetrics)>,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub lrap: f64,
    pub threshold: f64,
    pub n_tracks: usize,
}

pub fn instrument_report(predictions: &[TrackPrediction], threshold: f64) -> Result<EvalReport> {
    instrument_report_over(predictions, threshold, &all_labels())
}

/// Per-label and aggregate metrics. Predictions are scored in track-id
/// order so the result does not depend on how they were collected.
pub fn instrument_report_over(
    predictions: &[TrackPrediction],
    threshold: f64,
    scope: &[usize],
) -> Result<EvalReport> {
    let mut sorted = predictions.to_vec();
    sorted.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    let f1 = f1_scores_over(&sorted, threshold, scope)?;
    Ok(EvalReport {
        per_label: f1.per_label,
        f1_micro: f1.micro,
        f1_macro: f1.macro_,
        lrap: lrap_over(&sorted, scope)?,
        threshold,
        n_tracks: sorted.len(),
    })
}

impl EvalReport {
    /// Human-readable aligned table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>9} {:>9} {:>9} {:>8}",
            "label", "precision", "recall", "f1", "support"
        );
        for (l, m) in &self.per_label {
            let _ = writeln!(
                out,
                "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                LABEL_CODES[*l], m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(out, "{:<8} {:>29.4}", "micro", self.f1_micro);
        let _ = writeln!(out, "{:<8} {:>29.4}", "macro", self.f1_macro);
        let _ = writeln!(out, "{:<8} {:>29.4}", "lrap", self.lrap);
        let _ = writeln!(out, "threshold {} over {} tracks", self.threshold, self.n_tracks);
        out
    }

    /// `label\tprecision\trecall\tf1\tsupport` rows followed by the
    /// aggregates as `#`-prefixed key/value lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label\tprecision\trecall\tf1\tsupport\n");
        for (l, m) in &self.per_label {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                LABEL_CODES[*l], m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(out, "#f1_micro\t{:.6}", self.f1_micro);
        let _ = writeln!(out, "#f1_macro\t{:.6}", self.f1_macro);
        let _ = writeln!(out, "#lrap\t{:.6}", self.lrap);
        let _ = writeln!(out, "#threshold\t{}", self.threshold);
        let _ = writeln!(out, "#n_tracks\t{}", self.n_tracks);
        out
    }
}

/// `(threshold, micro, macro)` for thresholds 0.05, 0.10, ..., 0.95.
pub fn threshold_sweep(predictions: &[TrackPrediction], scope: &[usize]) -> Result<Vec<(f64, f64, f64)>> {
    (1..=19)
        .map(|i| {
            let t = f64::from(i) * 0.05;
            f1_scores_over(predictions, t, scope).map(|f| (t, f.micro, f.macro_))
        })
        .collect()
}
