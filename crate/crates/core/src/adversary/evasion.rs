//! Surrogate-guided prototype projection.
//!
//! A victim is moved in the surrogate's standardized space along the straight
//! line towards the centroid of its nearest Low-priority prototypes, in fixed
//! increments, until the surrogate first predicts Low. The hour of the request
//! is never changed.

use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::dataset::{Dataset, FeatureMatrix, MicrogridObservation, PriorityLabel, HOUR_FEATURE};
use crate::models::DeployedClassifier;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvasionAttackConfig {
    /// Standardized units per step.
    pub step_size: f64,
    pub max_steps: usize,
    /// Low prototypes averaged into the target centroid.
    pub neighbor_count: usize,
}

impl Default for EvasionAttackConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            max_steps: 200,
            neighbor_count: 10,
        }
    }
}

impl EvasionAttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(AttackError::InvalidConfig("step_size must be > 0".into()));
        }
        if self.max_steps == 0 {
            return Err(AttackError::InvalidConfig("max_steps must be >= 1".into()));
        }
        if self.neighbor_count == 0 {
            return Err(AttackError::InvalidConfig("neighbor_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Low-labelled rows in a surrogate's standardized space.
#[derive(Clone, Debug, PartialEq)]
pub struct LowPrototypes {
    points: FeatureMatrix,
}

impl LowPrototypes {
    /// Standardizes every Low row of `data` with the surrogate's statistics.
    pub fn from_dataset(data: &Dataset, surrogate: &DeployedClassifier) -> Result<Self, AttackError> {
        let labels = data.require_labels()?;
        let idx: Vec<usize> = (0..data.len()).filter(|&i| labels[i] == PriorityLabel::Low).collect();
        if idx.is_empty() {
            return Err(AttackError::NoLowPrototypes);
        }
        let raw = data.raw_features().select(&idx);
        Ok(Self {
            points: surrogate.normalizer.standardize_matrix(&raw),
        })
    }

    /// Prototypes already in standardized space.
    pub fn from_standardized(points: FeatureMatrix) -> Result<Self, AttackError> {
        if points.is_empty() {
            return Err(AttackError::NoLowPrototypes);
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Centroid of the `k` nearest prototypes (distance ties by index).
    pub fn centroid_near(&self, z: &[f64], k: usize) -> Vec<f64> {
        let mut d: Vec<(f64, usize)> = self
            .points
            .rows()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let k = k.min(d.len());
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = d[..k].iter().map(|p| p.1).collect();
        chosen.sort_unstable();
        let mut c = vec![0.0; z.len()];
        for &i in &chosen {
            for (cj, pj) in c.iter_mut().zip(self.points.row(i)) {
                *cj += pj;
            }
        }
        c.iter_mut().for_each(|v| *v /= k as f64);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvasionOutcome {
    pub perturbed: MicrogridObservation,
    /// Steps taken; 0 when the surrogate already predicts Low.
    pub steps: usize,
    /// False when neither the centroid nor `max_steps` produced a Low prediction.
    pub converged: bool,
}

/// Crafts the minimal-step perturbation of `x` that the surrogate predicts Low.
pub fn craft_evasion(
    x: &MicrogridObservation,
    surrogate: &DeployedClassifier,
    prototypes: &LowPrototypes,
    config: &EvasionAttackConfig,
) -> Result<EvasionOutcome, AttackError> {
    config.validate()?;
    if prototypes.is_empty() {
        return Err(AttackError::NoLowPrototypes);
    }
    let norm = &surrogate.normalizer;
    let predict = |z: &[f64]| surrogate.classifier.predict(z);
    let z0 = norm.standardize(&x.features());
    if predict(&z0)? == PriorityLabel::Low {
        return Ok(EvasionOutcome {
            perturbed: *x,
            steps: 0,
            converged: true,
        });
    }
    let mut target = prototypes.centroid_near(&z0, config.neighbor_count);
    target[HOUR_FEATURE] = z0[HOUR_FEATURE];
    let dir: Vec<f64> = target.iter().zip(&z0).map(|(t, z)| t - z).collect();
    let dist = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dist == 0.0 {
        return Ok(EvasionOutcome {
            perturbed: *x,
            steps: 0,
            converged: false,
        });
    }

    let mut z = z0.clone();
    let mut steps = 0;
    let mut remaining = dist;
    while steps < config.max_steps && remaining > 0.0 {
        steps += 1;
        let t = (steps as f64 * config.step_size).min(dist);
        let next_remaining = dist - t;
        debug_assert!(next_remaining < remaining);
        remaining = next_remaining;
        z = if t >= dist {
            target.clone()
        } else {
            z0.iter().zip(&dir).map(|(a, d)| a + d * (t / dist)).collect()
        };
        if predict(&z)? == PriorityLabel::Low {
            return Ok(EvasionOutcome {
                perturbed: to_observation(norm.destandardize(&z), x),
                steps,
                converged: true,
            });
        }
    }
    Ok(EvasionOutcome {
        perturbed: to_observation(norm.destandardize(&z), x),
        steps,
        converged: false,
    })
}

fn to_observation(mut raw: Vec<f64>, original: &MicrogridObservation) -> MicrogridObservation {
    raw[HOUR_FEATURE] = f64::from(original.hour_of_day);
    MicrogridObservation::from_features_clipped(&raw).expect("feature dimension is fixed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{NormStats, FEATURE_DIM};
    use crate::models::{fit, Hyperparameters, ModelKind};
    use PriorityLabel::*;

    fn obs(c: f64) -> MicrogridObservation {
        MicrogridObservation {
            consumption_kw: c,
            pv_generation_kw: 1.0,
            wind_generation_kw: 1.0,
            battery_capacity_kwh: 10.0,
            battery_soc_frac: 0.5,
            hour_of_day: 12,
        }
    }

    /// Identity normalizer and a 1-NN surrogate on consumption only:
    /// Low at consumption 0, High at consumption 2, boundary at 1.
    fn line_surrogate() -> DeployedClassifier {
        let x = FeatureMatrix::from_rows(&[obs(0.0).features(), obs(2.0).features()]);
        let mut hp = Hyperparameters::default();
        hp.knn.k = 1;
        DeployedClassifier {
            normalizer: NormStats {
                mean: vec![0.0; FEATURE_DIM],
                std: vec![1.0; FEATURE_DIM],
            },
            classifier: fit(ModelKind::KNearestNeighbors, &x, &[Low, High], &hp, 0).unwrap(),
        }
    }

    fn protos_at(c: f64) -> LowPrototypes {
        LowPrototypes::from_standardized(FeatureMatrix::from_rows(&[obs(c).features()])).unwrap()
    }

    #[test]
    fn already_low_is_untouched() {
        let s = line_surrogate();
        let x = obs(0.1);
        let out = craft_evasion(&x, &s, &protos_at(0.0), &EvasionAttackConfig::default()).unwrap();
        assert_eq!(out.steps, 0);
        assert!(out.converged);
        assert_eq!(out.perturbed, x);
    }

    #[test]
    fn one_step_across_linear_boundary() {
        let s = line_surrogate();
        let cfg = EvasionAttackConfig {
            step_size: 0.2,
            ..Default::default()
        };
        // 1.05 is High; the centroid at 0.85 lies one step away on the Low side.
        let out = craft_evasion(&obs(1.05), &s, &protos_at(0.85), &cfg).unwrap();
        assert_eq!(out.steps, 1);
        assert!(out.converged);
        assert!((out.perturbed.consumption_kw - 0.85).abs() < 1e-12);
    }

    #[test]
    fn step_count_matches_boundary_distance() {
        let s = line_surrogate();
        let cfg = EvasionAttackConfig {
            step_size: 0.05,
            max_steps: 200,
            neighbor_count: 1,
        };
        // From 1.83 towards 0 the first point below 1.0 is 0.98, after 17 steps.
        let out = craft_evasion(&obs(1.83), &s, &protos_at(0.0), &cfg).unwrap();
        assert_eq!(out.steps, 17);
        assert!((out.perturbed.consumption_kw - 0.98).abs() < 1e-9);
        // Minimality: one step less is still High.
        let prev = obs(1.83 - 16.0 * 0.05);
        assert_eq!(s.predict_observation(&prev), High);
    }

    #[test]
    fn unconverged_when_centroid_is_not_low() {
        let s = line_surrogate();
        let out = craft_evasion(&obs(1.8), &s, &protos_at(1.5), &EvasionAttackConfig::default()).unwrap();
        assert!(!out.converged);
        assert!((out.perturbed.consumption_kw - 1.5).abs() < 1e-9);
        let capped = EvasionAttackConfig {
            max_steps: 3,
            ..Default::default()
        };
        let out = craft_evasion(&obs(1.8), &s, &protos_at(0.0), &capped).unwrap();
        assert!(!out.converged);
        assert_eq!(out.steps, 3);
    }

    #[test]
    fn hour_is_frozen() {
        let mut x = obs(1.8);
        x.hour_of_day = 20;
        let mut p = obs(0.0);
        p.hour_of_day = 3;
        let s = line_surrogate();
        let protos = LowPrototypes::from_standardized(FeatureMatrix::from_rows(&[p.features()])).unwrap();
        let out = craft_evasion(&x, &s, &protos, &EvasionAttackConfig::default()).unwrap();
        assert_eq!(out.perturbed.hour_of_day, 20);
    }

    #[test]
    fn centroid_uses_nearest_prototypes() {
        let pts = FeatureMatrix::from_rows(&[[0.0], [1.0], [10.0], [2.0]]);
        let p = LowPrototypes::from_standardized(pts).unwrap();
        assert_eq!(p.centroid_near(&[0.4], 2), vec![0.5]);
        assert_eq!(p.centroid_near(&[0.4], 3), vec![1.0]);
        assert_eq!(p.centroid_near(&[0.4], 99), vec![13.0 / 4.0]);
    }

    #[test]
    fn no_prototypes() {
        let mut d = Dataset::new();
        d.push(obs(1.0), Some(High), crate::dataset::Provenance::Real);
        let s = line_surrogate();
        assert_eq!(LowPrototypes::from_dataset(&d, &s), Err(AttackError::NoLowPrototypes));
    }
}
