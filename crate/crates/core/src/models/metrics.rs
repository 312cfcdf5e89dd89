use serde::{Deserialize, Serialize};

use super::{ModelError, TrainedClassifier};
use crate::dataset::{FeatureMatrix, PriorityLabel};

/// Classification metrics derived from a 3x3 confusion matrix
/// (rows are true labels, columns predictions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: [[u64; 3]; 3],
    pub accuracy: f64,
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Ratios with a zero denominator are reported as 0.
    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let diag: u64 = (0..3).map(|c| confusion[c][c]).sum();
        let mut precision = [0.0; 3];
        let mut recall = [0.0; 3];
        let mut f1 = [0.0; 3];
        for c in 0..3 {
            let tp = confusion[c][c];
            let predicted: u64 = (0..3).map(|r| confusion[r][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            precision[c] = ratio(tp, predicted);
            recall[c] = ratio(tp, actual);
            let s = precision[c] + recall[c];
            f1[c] = if s > 0.0 { 2.0 * precision[c] * recall[c] / s } else { 0.0 };
        }
        Self {
            confusion,
            accuracy: ratio(diag, total),
            precision,
            recall,
            f1,
            macro_f1: f1.iter().sum::<f64>() / 3.0,
        }
    }

    pub fn from_predictions(truth: &[PriorityLabel], predicted: &[PriorityLabel]) -> Result<Self, ModelError> {
        if truth.len() != predicted.len() {
            return Err(ModelError::LabelCountMismatch(predicted.len(), truth.len()));
        }
        if truth.is_empty() {
            return Err(ModelError::EmptyTestSet);
        }
        let mut m = [[0u64; 3]; 3];
        for (t, p) in truth.iter().zip(predicted) {
            m[t.index()][p.index()] += 1;
        }
        Ok(Self::from_confusion(m))
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// Scores `model` on standardized features `x` against labels `y`.
pub fn evaluate(model: &TrainedClassifier, x: &FeatureMatrix, y: &[PriorityLabel]) -> Result<MetricsReport, ModelError> {
    if x.n_rows() != y.len() {
        return Err(ModelError::LabelCountMismatch(y.len(), x.n_rows()));
    }
    let predicted = model.predict_all(x)?;
    MetricsReport::from_predictions(y, &predicted)
}
