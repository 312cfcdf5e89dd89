//! CART trees (Gini impurity) and bagged random forests.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{argmax_priority, ModelError};
use crate::dataset::{FeatureMatrix, PriorityLabel};
use crate::seed::{derive_indexed, rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Minimum samples on each side of a split.
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_leaf: 2,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.min_leaf == 0 {
            return Err(ModelError::InvalidHyperparameter("tree.min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// Features considered at every split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, dim: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((dim as f64).sqrt().round() as usize).clamp(1, dim),
            MaxFeatures::All => dim,
            MaxFeatures::Count(m) => m.clamp(1, dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            tree: TreeParams::default(),
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_trees == 0 {
            return Err(ModelError::InvalidHyperparameter("forest.n_trees must be >= 1".into()));
        }
        if self.max_features == MaxFeatures::Count(0) {
            return Err(ModelError::InvalidHyperparameter("forest.max_features must be >= 1".into()));
        }
        self.tree.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        label: PriorityLabel,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

fn gini(counts: &[usize; 3], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize; 3]) -> PriorityLabel {
    argmax_priority(&counts.map(|c| c as f64))
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [PriorityLabel],
    params: &'a TreeParams,
    max_features: usize,
    rng: Option<&'a mut Rng>,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn candidate_features(&mut self) -> Vec<usize> {
        let dim = self.x.dim();
        match self.rng.as_deref_mut() {
            Some(rng) if self.max_features < dim => {
                let mut f = sample(rng, dim, self.max_features).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..dim).collect(),
        }
    }

    fn best_split(&mut self, idx: &[usize], counts: &[usize; 3]) -> Option<BestSplit> {
        let n = idx.len();
        let parent = gini(counts, n);
        let min_leaf = self.params.min_leaf;
        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in self.candidate_features() {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.x.row(i)[f], i)));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut left = [0usize; 3];
            for p in 1..n {
                left[self.y[sorted[p - 1].1].index()] += 1;
                if p < min_leaf || n - p < min_leaf || sorted[p - 1].0 >= sorted[p].0 {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1], counts[2] - left[2]];
                let weighted = (p as f64 * gini(&left, p) + (n - p) as f64 * gini(&right, n - p)) / n as f64;
                let gain = parent - weighted;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let (lo, hi) = (sorted[p - 1].0, sorted[p].0);
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let mut counts = [0usize; 3];
        for &i in &idx {
            counts[self.y[i].index()] += 1;
        }
        let node = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            label: majority(&counts),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return node;
        }
        let Some(split) = self.best_split(&idx, &counts) else {
            return node;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x.row(i)[split.feature] <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[node] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        node
    }
}

impl DecisionTree {
    pub fn fit(x: &FeatureMatrix, y: &[PriorityLabel], params: &TreeParams) -> Self {
        Self::grow(x, y, (0..y.len()).collect(), params, x.dim(), None)
    }

    fn grow(
        x: &FeatureMatrix,
        y: &[PriorityLabel],
        idx: Vec<usize>,
        params: &TreeParams,
        max_features: usize,
        rng: Option<&mut Rng>,
    ) -> Self {
        let mut b = Builder {
            x,
            y,
            params,
            max_features,
            rng,
            nodes: Vec::new(),
        };
        b.build(idx, 0);
        Self { nodes: b.nodes }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> PriorityLabel {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { label } => return label,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Trees are grown sequentially, each from its own seeded stream.
    pub fn fit(x: &FeatureMatrix, y: &[PriorityLabel], params: &ForestParams, seed: u64) -> Self {
        let n = y.len();
        let m = params.max_features.resolve(x.dim());
        let trees = (0..params.n_trees as u64)
            .map(|t| {
                let mut rng = rng_from_seed(derive_indexed(seed, "forest-tree", t));
                let idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::grow(x, y, idx, &params.tree, m, Some(&mut rng))
            })
            .collect();
        Self { trees }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn predict(&self, x: &[f64]) -> PriorityLabel {
        let mut votes = [0.0; 3];
        for t in &self.trees {
            votes[t.predict(x).index()] += 1.0;
        }
        argmax_priority(&votes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use PriorityLabel::*;

    fn random_set(n: usize, seed: u64) -> (FeatureMatrix, Vec<PriorityLabel>) {
        let mut rng = rng_from_seed(seed);
        let rows: Vec<[f64; 4]> = (0..n).map(|_| [(); 4].map(|_| rng.random_range(-1.0..1.0))).collect();
        let y = rows
            .iter()
            .map(|r| {
                if r[0] + 0.5 * r[1] > 0.3 {
                    High
                } else if r[2] > 0.0 {
                    Medium
                } else {
                    Low
                }
            })
            .collect();
        (FeatureMatrix::from_rows(&rows), y)
    }

    /// Independent walk: recurse on an explicit tree rather than looping.
    fn walk(nodes: &[TreeNode], at: usize, x: &[f64]) -> PriorityLabel {
        match &nodes[at] {
            TreeNode::Leaf { label } => *label,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    walk(nodes, *left, x)
                } else {
                    walk(nodes, *right, x)
                }
            }
        }
    }

    #[test]
    fn fits_axis_aligned_rule() {
        let (x, y) = random_set(600, 1);
        let t = DecisionTree::fit(&x, &y, &TreeParams::default());
        let acc = x.rows().zip(&y).filter(|(r, l)| t.predict(r) == **l).count() as f64 / 600.0;
        assert!(acc > 0.97, "{acc}");
    }

    #[test]
    fn predict_equals_full_walk() {
        let (x, y) = random_set(400, 2);
        let t = DecisionTree::fit(&x, &y, &TreeParams::default());
        let (q, _) = random_set(500, 3);
        for r in q.rows() {
            assert_eq!(t.predict(r), walk(t.nodes(), 0, r));
        }
    }

    #[test]
    fn respects_depth_and_min_leaf() {
        let (x, y) = random_set(300, 4);
        let t = DecisionTree::fit(&x, &y, &TreeParams { max_depth: 0, min_leaf: 2 });
        assert_eq!(t.nodes().len(), 1);
        let t = DecisionTree::fit(&x, &y, &TreeParams { max_depth: 2, min_leaf: 2 });
        assert!(t.nodes().len() <= 7);
    }

    #[test]
    fn single_tree_forest_without_bagging_equals_tree() {
        let (x, y) = random_set(300, 5);
        let tp = TreeParams::default();
        let dt = DecisionTree::fit(&x, &y, &tp);
        let rf = RandomForest::fit(
            &x,
            &y,
            &ForestParams {
                n_trees: 1,
                max_features: MaxFeatures::All,
                bootstrap: false,
                tree: tp,
            },
            99,
        );
        assert_eq!(rf.trees()[0], dt);
    }

    #[test]
    fn forest_deterministic() {
        let (x, y) = random_set(300, 6);
        let p = ForestParams::default();
        assert_eq!(RandomForest::fit(&x, &y, &p, 1), RandomForest::fit(&x, &y, &p, 1));
        assert_ne!(RandomForest::fit(&x, &y, &p, 1), RandomForest::fit(&x, &y, &p, 2));
    }

    #[test]
    fn pure_node_is_leaf() {
        let x = FeatureMatrix::from_rows(&[[0.0], [1.0], [2.0]]);
        let t = DecisionTree::fit(&x, &[Low, Low, Low], &TreeParams::default());
        assert_eq!(t.nodes(), &[TreeNode::Leaf { label: Low }]);
    }
}
