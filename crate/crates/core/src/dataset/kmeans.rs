//! Lloyd's algorithm with k-means++ seeding and independent restarts.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::{Dataset, DatasetError, FeatureMatrix, MicrogridObservation, NormStats, PriorityLabel};
use crate::seed::{derive_indexed, rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.k != PriorityLabel::COUNT {
            return Err(DatasetError::InvalidKMeans(format!("k must be 3, got {}", self.k)));
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(DatasetError::InvalidKMeans("restarts and max_iter must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(DatasetError::InvalidKMeans("tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Three clusters in standardized feature space and their priority mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// `cluster_to_priority[c]` is the label of cluster `c`.
    pub cluster_to_priority: Vec<PriorityLabel>,
    /// Statistics that map raw features into the clustering space.
    pub norm: NormStats,
    pub inertia: f64,
    /// Objective after every assignment step of the winning restart.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

impl KMeansModel {
    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    /// Nearest cluster of a standardized point.
    pub fn assign(&self, z: &[f64]) -> Result<usize, DatasetError> {
        if z.len() != self.dim() {
            return Err(DatasetError::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(nearest(z, &self.centroids).0)
    }

    /// Priority of a raw (unstandardized) feature vector.
    pub fn predict_raw(&self, x: &[f64]) -> Result<PriorityLabel, DatasetError> {
        if x.len() != self.dim() {
            return Err(DatasetError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let c = self.assign(&self.norm.standardize(x))?;
        Ok(self.cluster_to_priority[c])
    }

    pub fn centroid_of(&self, label: PriorityLabel) -> &[f64] {
        let c = self
            .cluster_to_priority
            .iter()
            .position(|l| *l == label)
            .expect("cluster_to_priority is a bijection");
        &self.centroids[c]
    }
}

struct LloydRun {
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    inertia: f64,
    trace: Vec<f64>,
}

fn kmeans_plus_plus(x: &FeatureMatrix, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = x.n_rows();
    let mut centroids = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = x.rows().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            0
        };
        let c = x.row(pick).to_vec();
        for (d, r) in d2.iter_mut().zip(x.rows()) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(x: &FeatureMatrix, k: usize, max_iter: usize, tol: f64, rng: &mut Rng) -> LloydRun {
    let dim = x.dim();
    let mut centroids = kmeans_plus_plus(x, k, rng);
    let mut assignment = vec![0usize; x.n_rows()];
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let mut inertia = 0.0;
        for (a, r) in assignment.iter_mut().zip(x.rows()) {
            let (c, d) = nearest(r, &centroids);
            *a = c;
            inertia += d;
        }
        trace.push(inertia);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, r) in assignment.iter().zip(x.rows()) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            // An emptied cluster keeps its centroid.
            if counts[c] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        if shift < tol {
            break;
        }
    }
    let mut inertia = 0.0;
    for (a, r) in assignment.iter_mut().zip(x.rows()) {
        let (c, d) = nearest(r, &centroids);
        *a = c;
        inertia += d;
    }
    trace.push(inertia);
    LloydRun {
        centroids,
        assignment,
        inertia,
        trace,
    }
}

fn distinct_rows(x: &FeatureMatrix, at_least: usize) -> bool {
    let mut seen = HashSet::new();
    for r in x.rows() {
        seen.insert(r.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if seen.len() >= at_least {
            return true;
        }
    }
    false
}

/// Clusters a standardized dataset and maps clusters to priorities by
/// descending mean net demand of their members.
///
/// Restarts use independent RNG streams derived from `seed` and may run in
/// parallel; the lowest-inertia restart wins, ties to the lower restart index.
pub fn kmeans_fit(d: &Dataset, config: &KMeansConfig, seed: u64) -> Result<KMeansModel, DatasetError> {
    config.validate()?;
    if d.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let norm = d.norm_stats().cloned().ok_or(DatasetError::NotStandardized)?;
    let x = d.standardized()?;
    let k = config.k;
    if !distinct_rows(&x, k) {
        return Err(DatasetError::TooFewDistinctPoints { k });
    }
    let runs: Vec<LloydRun> = (0..config.restarts as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_indexed(seed, "kmeans-restart", r));
            lloyd(&x, k, config.max_iter, config.tol, &mut rng)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("restarts >= 1");

    let mut demand = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&a, o) in best.assignment.iter().zip(d.observations()) {
        demand[a] += o.net_demand_kw();
        counts[a] += 1;
    }
    for c in 0..k {
        demand[c] = if counts[c] > 0 {
            demand[c] / counts[c] as f64
        } else {
            MicrogridObservation::from_features_clipped(&norm.destandardize(&best.centroids[c]))?.net_demand_kw()
        };
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| demand[b].total_cmp(&demand[a]).then(a.cmp(&b)));
    let mut cluster_to_priority = vec![PriorityLabel::Low; k];
    for (rank, &c) in order.iter().enumerate() {
        cluster_to_priority[c] = PriorityLabel::ALL[rank];
    }

    Ok(KMeansModel {
        k,
        centroids: best.centroids,
        cluster_to_priority,
        norm,
        inertia: best.inertia,
        objective_trace: best.trace,
    })
}

/// Labels every observation with the priority of its nearest centroid.
/// Provenance and normalization statistics are unchanged.
pub fn label_dataset(d: &Dataset, m: &KMeansModel) -> Result<Dataset, DatasetError> {
    let labels = d
        .observations()
        .iter()
        .map(|o| m.predict_raw(&o.features()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = d.clone();
    out.set_labels(labels);
    Ok(out)
}
