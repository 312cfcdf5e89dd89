//! Builds the labelled, class-balanced edge training set and the disjoint
//! victim holdout from a raw pool of observations.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    fit_normalizer, kmeans_fit, label_dataset, largest_remainder, Dataset, DatasetError, KMeansConfig,
    KMeansModel, PriorityLabel,
};
use crate::seed::{derive_seed, stage_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Size of the edge classifier's training set.
    pub total_size: usize,
    /// Victim requests drawn per class for the evasion holdout.
    pub victims_per_class: usize,
    /// Synthetic pool size as a multiple of `total_size + 3 * victims_per_class`.
    /// Rebalancing draws from the pool without replacement.
    pub pool_factor: f64,
    pub kmeans: KMeansConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            total_size: 2000,
            victims_per_class: 100,
            pool_factor: 2.0,
            kmeans: KMeansConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.kmeans.validate()?;
        if self.total_size < 10 {
            return Err(DatasetError::InvalidKMeans("total_size must be >= 10".into()));
        }
        if !(self.pool_factor >= 1.0 && self.pool_factor.is_finite()) {
            return Err(DatasetError::InvalidKMeans("pool_factor must be >= 1".into()));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        ((self.total_size + 3 * self.victims_per_class) as f64 * self.pool_factor).ceil() as usize
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub kmeans: KMeansModel,
    /// Balanced, labelled, standardized with its own statistics.
    pub edge_train: Dataset,
    /// `victims_per_class` requests of every priority, never in `edge_train`.
    pub victims: Dataset,
    pub edge_pool_indices: Vec<usize>,
    pub victim_pool_indices: Vec<usize>,
}

/// Labels `pool` with K-means and draws a balanced edge training set plus a
/// stratified victim holdout, both without replacement.
pub fn prepare_benchmark(pool: &Dataset, config: &BenchmarkConfig, seed: u64) -> Result<Benchmark, DatasetError> {
    config.validate()?;
    let stats = fit_normalizer(&pool.raw_features())?;
    let pool = pool.clone().with_norm_stats(stats);
    let kmeans = kmeans_fit(&pool, &config.kmeans, derive_seed(seed, "kmeans"))?;
    let labeled = label_dataset(&pool, &kmeans)?;

    let train_shares = largest_remainder(&[1, 1, 1], config.total_size);
    let mut rng = stage_rng(seed, "benchmark-draw");
    let mut edge_idx = Vec::with_capacity(config.total_size);
    let mut victim_idx = Vec::with_capacity(3 * config.victims_per_class);
    for (label, share) in PriorityLabel::ALL.into_iter().zip(train_shares) {
        let mut members = labeled.indices_with_label(label);
        let required = share + config.victims_per_class;
        if members.len() < required {
            return Err(DatasetError::InsufficientClassSamples {
                label,
                available: members.len(),
                required,
            });
        }
        members.shuffle(&mut rng);
        edge_idx.extend_from_slice(&members[..share]);
        victim_idx.extend_from_slice(&members[share..required]);
    }
    edge_idx.sort_unstable();
    victim_idx.sort_unstable();
    debug_assert!(victim_idx.iter().all(|i| edge_idx.binary_search(i).is_err()));

    let edge_train = labeled.select(&edge_idx);
    let edge_stats = fit_normalizer(&edge_train.raw_features())?;
    let edge_train = edge_train.with_norm_stats(edge_stats.clone());
    let victims = labeled.select(&victim_idx).with_norm_stats(edge_stats);
    Ok(Benchmark {
        kmeans,
        edge_train,
        victims,
        edge_pool_indices: edge_idx,
        victim_pool_indices: victim_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_scenario, ScenarioProfile};

    #[test]
    fn balanced_and_disjoint() {
        let cfg = BenchmarkConfig::default();
        let pool = generate_scenario(cfg.pool_size(), 7, &ScenarioProfile::default()).unwrap();
        let b = prepare_benchmark(&pool, &cfg, 7).unwrap();
        assert_eq!(b.edge_train.len(), 2000);
        assert_eq!(b.edge_train.class_counts(), [667, 667, 666]);
        assert_eq!(b.victims.class_counts(), [100, 100, 100]);
        for i in &b.victim_pool_indices {
            assert!(b.edge_pool_indices.binary_search(i).is_err());
        }
    }

    #[test]
    fn insufficient_pool() {
        let cfg = BenchmarkConfig::default();
        let pool = generate_scenario(900, 7, &ScenarioProfile::default()).unwrap();
        assert!(matches!(
            prepare_benchmark(&pool, &cfg, 7),
            Err(DatasetError::InsufficientClassSamples { .. })
        ));
    }
}
