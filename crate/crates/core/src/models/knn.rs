use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::{FeatureMatrix, PriorityLabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

impl KnnParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k == 0 {
            return Err(ModelError::InvalidHyperparameter("knn.k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Stored training set; Euclidean distance on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    points: FeatureMatrix,
    labels: Vec<PriorityLabel>,
}

impl KnnModel {
    pub fn fit(x: &FeatureMatrix, y: &[PriorityLabel], params: &KnnParams) -> Self {
        Self {
            k: params.k.min(y.len()),
            points: x.clone(),
            labels: y.to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &FeatureMatrix {
        &self.points
    }

    pub fn labels(&self) -> &[PriorityLabel] {
        &self.labels
    }

    /// The `k` nearest training rows as `(squared distance, index)`, ordered
    /// by distance then index.
    pub fn neighbors(&self, x: &[f64]) -> Vec<(f64, usize)> {
        let k = self.k;
        // Sorted insertion buffer; k is small.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, row) in self.points.rows().enumerate() {
            let mut d = 0.0;
            for (a, b) in row.iter().zip(x) {
                let t = a - b;
                d += t * t;
            }
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(k);
        }
        best
    }

    /// Majority vote. Ties go to the class whose voters have the smaller summed
    /// distance, then to the higher priority.
    pub fn predict(&self, x: &[f64]) -> PriorityLabel {
        vote(self.neighbors(x).iter().map(|&(d2, i)| (d2.sqrt(), self.labels[i])))
    }
}

/// Votes over `(distance, label)` pairs given in ascending distance order.
pub(crate) fn vote(neighbors: impl Iterator<Item = (f64, PriorityLabel)>) -> PriorityLabel {
    let mut votes = [0usize; 3];
    let mut dist = [0.0f64; 3];
    for (d, l) in neighbors {
        votes[l.index()] += 1;
        dist[l.index()] += d;
    }
    let mut best = 0;
    for c in 1..3 {
        let better = votes[c] > votes[best] || (votes[c] == votes[best] && dist[c] < dist[best]);
        if better {
            best = c;
        }
    }
    PriorityLabel::ALL[best]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit, Hyperparameters, ModelKind};
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use PriorityLabel::*;

    /// Exhaustive distance scan: sort every training row by (distance, index),
    /// take the first k and vote with the same tie rules.
    fn oracle(points: &[Vec<f64>], labels: &[PriorityLabel], k: usize, q: &[f64]) -> PriorityLabel {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let top = &all[..k.min(all.len())];
        let mut votes = [0usize; 3];
        let mut dist = [0.0f64; 3];
        for &(d2, i) in top {
            votes[labels[i].index()] += 1;
            dist[labels[i].index()] += d2.sqrt();
        }
        let max_votes = *votes.iter().max().unwrap();
        let tied: Vec<usize> = (0..3).filter(|&c| votes[c] == max_votes).collect();
        let min_dist = tied.iter().map(|&c| dist[c]).fold(f64::INFINITY, f64::min);
        let winner = tied.into_iter().find(|&c| dist[c] == min_dist).unwrap();
        PriorityLabel::ALL[winner]
    }

    #[test]
    fn one_nn_memorizes() {
        let x = FeatureMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let y = [High, Medium, Low];
        let m = KnnModel::fit(&x, &y, &KnnParams { k: 1 });
        for (r, l) in x.rows().zip(&y) {
            assert_eq!(m.predict(r), *l);
        }
    }

    #[test]
    fn unanimous_neighborhood() {
        let mut rows = vec![[0.0, 0.0]; 0];
        let mut y = Vec::new();
        for i in 0..5 {
            rows.push([0.01 * i as f64, 0.0]);
            y.push(Medium);
        }
        rows.push([5.0, 5.0]);
        y.push(Low);
        let m = KnnModel::fit(&FeatureMatrix::from_rows(&rows), &y, &KnnParams { k: 5 });
        assert_eq!(m.predict(&[0.0, 0.0]), Medium);
    }

    #[test]
    fn two_way_tie_goes_to_nearer_then_higher_priority() {
        let x = FeatureMatrix::from_rows(&[[1.0], [3.0]]);
        let m = KnnModel::fit(&x, &[Low, High], &KnnParams { k: 2 });
        assert_eq!(m.predict(&[1.5]), Low);
        assert_eq!(m.predict(&[2.9]), High);
        // Equidistant: higher priority wins.
        assert_eq!(m.predict(&[2.0]), High);
        let m = KnnModel::fit(&x, &[Low, Medium], &KnnParams { k: 2 });
        assert_eq!(m.predict(&[2.0]), Medium);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_queries() {
        let mut rng = rng_from_seed(42);
        let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<PriorityLabel> = (0..400).map(|_| PriorityLabel::ALL[rng.random_range(0..3)]).collect();
        let x = FeatureMatrix::from_rows(&rows);
        for k in [1, 2, 4, 5, 9] {
            let m = fit(ModelKind::KNearestNeighbors, &x, &labels, &Hyperparameters { knn: KnnParams { k }, ..Default::default() }, 0).unwrap();
            for _ in 0..100 {
                let q: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
                assert_eq!(m.predict(&q).unwrap(), oracle(&rows, &labels, k, &q));
            }
        }
    }

    proptest! {
        #[test]
        fn oracle_equivalence_with_duplicates(
            pts in prop::collection::vec((0i32..4, 0i32..4, 0usize..3), 1..40),
            k in 1usize..8,
            q in (0i32..4, 0i32..4),
        ) {
            // Integer grid coordinates produce many exact distance ties.
            let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0 as f64, p.1 as f64]).collect();
            let labels: Vec<_> = pts.iter().map(|p| PriorityLabel::ALL[p.2]).collect();
            let m = KnnModel::fit(&FeatureMatrix::from_rows(&rows), &labels, &KnnParams { k });
            let q = [q.0 as f64 + 0.5, q.1 as f64];
            prop_assert_eq!(m.predict(&q), oracle(&rows, &labels, k, &q));
        }
    }
}
