use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy and macro F1 from a confusion matrix.
///
/// Macro F1 averages per-class F1 over the classes that occur in the truth
/// or in the predictions; classes absent from both do not dilute the score.
/// Precision (recall) of a class with no predictions (no samples) is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub num_samples: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub per_class: Vec<ClassStats>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_labels(
        truth: &[usize],
        predicted: &[usize],
        num_classes: usize,
    ) -> Result<Metrics> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape {
                op: "metrics",
                left: vec![truth.len()],
                right: vec![predicted.len()],
            });
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::InvalidParameter(format!(
                    "label pair ({t}, {p}) outside {num_classes} classes"
                )));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Metrics> {
        let c = confusion.len();
        if confusion.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidParameter(
                "confusion matrix must be square".into(),
            ));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Empty("confusion matrix"));
        }
        let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut per_class = Vec::with_capacity(c);
        let (mut f1_sum, mut present) = (0.0, 0usize);
        for k in 0..c {
            let tp = confusion[k][k];
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = (0..c).map(|i| confusion[i][k]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            if support > 0 || predicted > 0 {
                f1_sum += f1;
                present += 1;
            }
            per_class.push(ClassStats {
                class: k,
                support,
                precision,
                recall,
                f1,
            });
        }
        Ok(Metrics {
            num_samples: total,
            accuracy: correct as f64 / total as f64,
            f1: f1_sum / present as f64,
            per_class,
            confusion,
        })
    }

    /// Element-wise sum of confusion matrices, re-scored.
    pub fn pooled(parts: &[&Metrics]) -> Result<Metrics> {
        let first = parts.first().ok_or(Error::Empty("metrics to pool"))?;
        let mut confusion = first.confusion.clone();
        for m in &parts[1..] {
            if m.confusion.len() != confusion.len() {
                return Err(Error::InvalidParameter(
                    "cannot pool different class counts".into(),
                ));
            }
            for (row, other) in confusion.iter_mut().zip(&m.confusion) {
                for (a, b) in row.iter_mut().zip(other) {
                    *a += b;
                }
            }
        }
        Self::from_confusion(confusion)
    }
}
