use serde::{Deserialize, Serialize};

use super::{DatasetError, FeatureMatrix};

/// Per-feature mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn destandardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn standardize_matrix(&self, x: &FeatureMatrix) -> FeatureMatrix {
        assert_eq!(x.dim(), self.dim(), "normalizer dimension mismatch");
        let mut data = Vec::with_capacity(x.as_slice().len());
        for row in x.rows() {
            data.extend(self.standardize(row));
        }
        FeatureMatrix::new(data, x.dim())
    }
}

/// Fits per-feature mean and population standard deviation (divide by n).
///
/// A feature whose deviation is negligible relative to its magnitude is
/// rejected as constant.
pub fn fit_normalizer(x: &FeatureMatrix) -> Result<NormStats, DatasetError> {
    let n = x.n_rows();
    if n == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let d = x.dim();
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; d];
    for row in x.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let dv = v - m;
            *s += dv * dv;
        }
    }
    let mut std = Vec::with_capacity(d);
    for (j, s) in var.into_iter().enumerate() {
        let sd = (s / nf).sqrt();
        if !(sd > 1e-12 * mean[j].abs().max(1.0)) {
            return Err(DatasetError::ZeroVarianceFeature(j));
        }
        std.push(sd);
    }
    Ok(NormStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_points_population_convention() {
        let x = FeatureMatrix::new(vec![0.0, 2.0], 1);
        let s = fit_normalizer(&x).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.std, vec![1.0]);
    }

    #[test]
    fn constant_column_rejected() {
        let x = FeatureMatrix::new(vec![1.0, 0.1, 2.0, 0.1, 3.0, 0.1], 2);
        assert_eq!(fit_normalizer(&x), Err(DatasetError::ZeroVarianceFeature(1)));
    }

    #[test]
    fn empty_rejected() {
        let x = FeatureMatrix::new(vec![], 2);
        assert_eq!(fit_normalizer(&x), Err(DatasetError::EmptyDataset));
    }

    proptest! {
        #[test]
        fn standardize_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..40)) {
            let x = FeatureMatrix::from_rows(&rows);
            if let Ok(stats) = fit_normalizer(&x) {
                for row in x.rows() {
                    let back = stats.destandardize(&stats.standardize(row));
                    for (a, b) in row.iter().zip(&back) {
                        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn refit_after_standardize_is_unit(rows in prop::collection::vec(prop::collection::vec(-50f64..50.0, 2), 3..60)) {
            let x = FeatureMatrix::from_rows(&rows);
            if let Ok(stats) = fit_normalizer(&x) {
                let z = stats.standardize_matrix(&x);
                let again = fit_normalizer(&z).unwrap();
                for j in 0..2 {
                    prop_assert!(again.mean[j].abs() < 1e-9);
                    prop_assert!((again.std[j] - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
