//! Classification metrics: accuracy, macro and support-weighted
//! precision/recall/F1, and the confusion matrix.

use serde::{Deserialize, Serialize};

use super::data::Example;
use super::encoder::{forward_one, ModelError};
use super::params::ModelParams;
use super::ModelConfig;
use crate::pos::RuleSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// confusion[gold][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
}

/// Computes all metrics from gold/predicted label pairs. Classes with no
/// support or no predictions score 0 by convention.
pub fn compute_metrics(golds: &[usize], preds: &[usize], num_classes: usize) -> Metrics {
    assert_eq!(golds.len(), preds.len());
    let n = golds.len();
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&g, &p) in golds.iter().zip(preds) {
        confusion[g][p] += 1;
    }

    let mut correct = 0usize;
    let mut macro_p = 0.0;
    let mut macro_r = 0.0;
    let mut macro_f = 0.0;
    let mut weighted_p = 0.0;
    let mut weighted_r = 0.0;
    let mut weighted_f = 0.0;
    for c in 0..num_classes {
        let tp = confusion[c][c];
        correct += tp;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..num_classes).map(|g| confusion[g][c]).sum();
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        macro_p += precision;
        macro_r += recall;
        macro_f += f1;
        let w = support as f64 / n as f64;
        weighted_p += w * precision;
        weighted_r += w * recall;
        weighted_f += w * f1;
    }

    Metrics {
        accuracy: correct as f64 / n as f64,
        macro_precision: macro_p / num_classes as f64,
        macro_recall: macro_r / num_classes as f64,
        macro_f1: macro_f / num_classes as f64,
        weighted_precision: weighted_p,
        weighted_recall: weighted_r,
        weighted_f1: weighted_f,
        confusion,
        samples: n,
    }
}

/// Runs the model over a dataset and computes metrics. Prediction is the
/// argmax logit (first maximum on ties).
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    dataset: &[Example],
    rules: &RuleSet,
) -> Result<Metrics, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut golds = Vec::with_capacity(dataset.len());
    let mut preds = Vec::with_capacity(dataset.len());
    for example in dataset {
        let (logits, _) = forward_one(params, cfg, rules, &example.sequence)?;
        // First maximum wins on ties, for deterministic predictions.
        let mut pred = 0usize;
        for (i, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[pred] {
                pred = i;
            }
        }
        golds.push(example.label);
        preds.push(pred);
    }
    Ok(compute_metrics(&golds, &preds, cfg.num_classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_two_thirds() {
        let m = compute_metrics(&[1, 1, 1], &[1, 0, 1], 2);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.confusion[1][1], 2);
        assert_eq!(m.confusion[1][0], 1);
        assert_eq!(m.samples, 3);
    }

    #[test]
    fn perfect_predictions() {
        let m = compute_metrics(&[0, 1, 0, 1], &[0, 1, 0, 1], 2);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.weighted_f1, 1.0);
        assert_eq!(m.confusion[0][1], 0);
        assert_eq!(m.confusion[1][0], 0);
    }

    #[test]
    fn absent_class_scores_zero() {
        // Gold has only class 0; class 1 has no support.
        let m = compute_metrics(&[0, 0, 0], &[0, 1, 0], 2);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
        // class0: p=1.0, r=2/3, f=0.8; class1: p=0, r=0 (no support), f=0.
        assert!((m.macro_f1 - 0.4).abs() < 1e-12);
        assert!((m.weighted_f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn accuracy_equals_confusion_trace() {
        let golds = vec![0, 1, 1, 0, 1, 0, 0, 1];
        let preds = vec![0, 1, 0, 0, 1, 1, 0, 1];
        let m = compute_metrics(&golds, &preds, 2);
        let trace: usize = (0..2).map(|c| m.confusion[c][c]).sum();
        assert_eq!(m.accuracy, trace as f64 / golds.len() as f64);
        let total: usize = m.confusion.iter().flatten().sum();
        assert_eq!(total, golds.len());
    }
}
