use serde::{Deserialize, Serialize};

use super::{argmax_priority, ModelError};
use crate::dataset::{FeatureMatrix, PriorityLabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NaiveBayesParams {
    /// Lower bound on every per-class feature variance.
    pub var_floor: f64,
}

impl Default for NaiveBayesParams {
    fn default() -> Self {
        Self { var_floor: 1e-9 }
    }
}

impl NaiveBayesParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.var_floor > 0.0) {
            return Err(ModelError::InvalidHyperparameter("naive_bayes.var_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Gaussian naive Bayes. Classes absent from training are never predicted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    dim: usize,
    means: Vec<f64>,
    vars: Vec<f64>,
    /// `None` for classes without training rows.
    log_priors: [Option<f64>; 3],
}

impl GaussianNb {
    pub fn fit(x: &FeatureMatrix, y: &[PriorityLabel], p: &NaiveBayesParams) -> Self {
        let d = x.dim();
        let mut counts = [0usize; 3];
        let mut means = vec![0.0; 3 * d];
        for (row, l) in x.rows().zip(y) {
            let c = l.index();
            counts[c] += 1;
            for (m, v) in means[c * d..(c + 1) * d].iter_mut().zip(row) {
                *m += v;
            }
        }
        for c in 0..3 {
            if counts[c] > 0 {
                means[c * d..(c + 1) * d].iter_mut().for_each(|m| *m /= counts[c] as f64);
            }
        }
        let mut vars = vec![0.0; 3 * d];
        for (row, l) in x.rows().zip(y) {
            let c = l.index();
            for j in 0..d {
                let t = row[j] - means[c * d + j];
                vars[c * d + j] += t * t;
            }
        }
        for c in 0..3 {
            for v in &mut vars[c * d..(c + 1) * d] {
                *v = if counts[c] > 0 { *v / counts[c] as f64 } else { 1.0 };
                *v = v.max(p.var_floor);
            }
        }
        let n = y.len() as f64;
        let log_priors = counts.map(|k| (k > 0).then(|| (k as f64 / n).ln()));
        Self {
            dim: d,
            means,
            vars,
            log_priors,
        }
    }

    pub fn log_posteriors(&self, x: &[f64]) -> [f64; 3] {
        let d = self.dim;
        let mut out = [f64::NEG_INFINITY; 3];
        for c in 0..3 {
            let Some(lp) = self.log_priors[c] else { continue };
            let mut s = lp;
            for j in 0..d {
                let var = self.vars[c * d + j];
                let t = x[j] - self.means[c * d + j];
                s += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - t * t / (2.0 * var);
            }
            out[c] = s;
        }
        out
    }

    pub fn predict(&self, x: &[f64]) -> PriorityLabel {
        argmax_priority(&self.log_posteriors(x))
    }
}
