use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;

/// Per-feature affine map from `[lo, hi]` onto `[-1, 1]`. Constant features
/// map to 0 and back to their value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let d = x.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for r in x.rows() {
            for j in 0..d {
                lo[j] = lo[j].min(r[j]);
                hi[j] = hi[j].max(r[j]);
            }
        }
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let span = self.hi[j] - self.lo[j];
                if span > 0.0 {
                    2.0 * (v - self.lo[j]) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn unscale(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(j, &v)| self.lo[j] + (v + 1.0) * 0.5 * (self.hi[j] - self.lo[j]))
            .collect()
    }
}
