//! Multinomial logistic regression and one-vs-rest linear SVM.
//!
//! Both store one weight row and bias per class and predict the class with the
//! highest linear score. Parameters are flattened as `[W (3 x d, row-major), b (3)]`
//! for the loss/gradient functions.

use serde::{Deserialize, Serialize};

use super::{argmax_priority, ModelError};
use crate::dataset::{FeatureMatrix, PriorityLabel};

const K: usize = PriorityLabel::COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

impl LogisticParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidHyperparameter("logistic.learning_rate must be > 0".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(ModelError::InvalidHyperparameter("logistic.l2 must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            learning_rate: 0.1,
            epochs: 500,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ModelError::InvalidHyperparameter("svm.c must be > 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidHyperparameter("svm.learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    dim: usize,
    weights: Vec<f64>,
    bias: [f64; K],
}

impl LinearModel {
    fn from_flat(dim: usize, params: &[f64]) -> Self {
        let mut bias = [0.0; K];
        bias.copy_from_slice(&params[K * dim..]);
        Self {
            dim,
            weights: params[..K * dim].to_vec(),
            bias,
        }
    }

    pub fn scores(&self, x: &[f64]) -> [f64; K] {
        let mut s = self.bias;
        for (c, sc) in s.iter_mut().enumerate() {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            *sc += w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        s
    }

    pub fn predict(&self, x: &[f64]) -> PriorityLabel {
        argmax_priority(&self.scores(x))
    }
}

fn scores_flat(params: &[f64], dim: usize, x: &[f64]) -> [f64; K] {
    let mut s = [0.0; K];
    for (c, sc) in s.iter_mut().enumerate() {
        let w = &params[c * dim..(c + 1) * dim];
        *sc = params[K * dim + c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

/// Mean multinomial cross-entropy plus `l2 / 2 * ||W||^2` (biases are not
/// penalized), and its gradient.
pub fn logistic_loss_and_grad(params: &[f64], x: &FeatureMatrix, y: &[PriorityLabel], l2: f64) -> (f64, Vec<f64>) {
    let d = x.dim();
    let n = y.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (row, label) in x.rows().zip(y) {
        let s = scores_flat(params, d, row);
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = s.map(|v| (v - max).exp());
        let z: f64 = exps.iter().sum();
        let t = label.index();
        loss += -(s[t] - max - z.ln());
        for c in 0..K {
            let g = exps[c] / z - if c == t { 1.0 } else { 0.0 };
            for (gw, xv) in grad[c * d..(c + 1) * d].iter_mut().zip(row) {
                *gw += g * xv;
            }
            grad[K * d + c] += g;
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    let w = &params[..K * d];
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in grad[..K * d].iter_mut().zip(w) {
        *g += l2 * v;
    }
    (loss, grad)
}

/// Full-batch gradient descent from zero weights. Also returns the loss
/// before every step and after the last one.
pub fn fit_logistic(x: &FeatureMatrix, y: &[PriorityLabel], p: &LogisticParams) -> (LinearModel, Vec<f64>) {
    let d = x.dim();
    let mut params = vec![0.0; K * d + K];
    let mut trace = Vec::with_capacity(p.epochs + 1);
    for _ in 0..p.epochs {
        let (loss, grad) = logistic_loss_and_grad(&params, x, y, p.l2);
        trace.push(loss);
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= p.learning_rate * g;
        }
    }
    trace.push(logistic_loss_and_grad(&params, x, y, p.l2).0);
    (LinearModel::from_flat(d, &params), trace)
}

/// Sum over classes of the one-vs-rest objective
/// `0.5 * ||w_c||^2 + C * mean_i max(0, 1 - s_ic (w_c . x_i + b_c))`
/// with `s_ic = +1` iff row `i` has class `c`, and a subgradient (zero at the
/// hinge kink).
pub fn svm_objective_and_subgradient(params: &[f64], x: &FeatureMatrix, y: &[PriorityLabel], c: f64) -> (f64, Vec<f64>) {
    let d = x.dim();
    let n = y.len() as f64;
    let mut grad = params.to_vec();
    grad[K * d..].iter_mut().for_each(|g| *g = 0.0);
    let mut obj = 0.5 * params[..K * d].iter().map(|v| v * v).sum::<f64>();
    for (row, label) in x.rows().zip(y) {
        let s = scores_flat(params, d, row);
        for k in 0..K {
            let sign = if label.index() == k { 1.0 } else { -1.0 };
            let margin = 1.0 - sign * s[k];
            if margin > 0.0 {
                obj += c * margin / n;
                let g = -c * sign / n;
                for (gw, xv) in grad[k * d..(k + 1) * d].iter_mut().zip(row) {
                    *gw += g * xv;
                }
                grad[K * d + k] += g;
            }
        }
    }
    (obj, grad)
}

/// Full-batch subgradient descent with step `learning_rate / sqrt(t + 1)`.
pub fn fit_svm(x: &FeatureMatrix, y: &[PriorityLabel], p: &SvmParams) -> LinearModel {
    let d = x.dim();
    let mut params = vec![0.0; K * d + K];
    for t in 0..p.epochs {
        let (_, grad) = svm_objective_and_subgradient(&params, x, y, p.c);
        let step = p.learning_rate / ((t + 1) as f64).sqrt();
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= step * g;
        }
    }
    LinearModel::from_flat(d, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use PriorityLabel::*;

    fn three_class(n: usize, seed: u64) -> (FeatureMatrix, Vec<PriorityLabel>) {
        let mut rng = rng_from_seed(seed);
        let centers = [[1.5, 0.0, 0.3], [-1.0, 1.2, -0.4], [-0.5, -1.3, 0.5]];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            rows.push(centers[c].map(|m| m + rng.random_range(-0.9..0.9)));
            y.push(PriorityLabel::ALL[c]);
        }
        (FeatureMatrix::from_rows(&rows), y)
    }

    fn central_difference(f: impl Fn(&[f64]) -> f64, p: &[f64], h: f64) -> Vec<f64> {
        let mut q = p.to_vec();
        (0..p.len())
            .map(|i| {
                q[i] = p[i] + h;
                let up = f(&q);
                q[i] = p[i] - h;
                let down = f(&q);
                q[i] = p[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let (x, y) = three_class(60, 1);
        let mut rng = rng_from_seed(2);
        for _ in 0..10 {
            let p: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = logistic_loss_and_grad(&p, &x, &y, 1e-2);
            let fd = central_difference(|q| logistic_loss_and_grad(q, &x, &y, 1e-2).0, &p, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                assert!(rel_err(*a, *b) < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn svm_subgradient_matches_finite_differences_away_from_kinks() {
        let (x, y) = three_class(60, 3);
        let mut rng = rng_from_seed(4);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 10 {
            let p: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Reject points where any margin is within reach of the step.
            let near_kink = x.rows().zip(&y).any(|(r, l)| {
                let s = scores_flat(&p, 3, r);
                let reach = h * (1.0 + r.iter().map(|v| v.abs()).sum::<f64>());
                (0..K).any(|k| {
                    let sign = if l.index() == k { 1.0 } else { -1.0 };
                    (1.0 - sign * s[k]).abs() < 10.0 * reach
                })
            });
            if near_kink {
                continue;
            }
            let (_, g) = svm_objective_and_subgradient(&p, &x, &y, 1.0);
            let fd = central_difference(|q| svm_objective_and_subgradient(q, &x, &y, 1.0).0, &p, h);
            for (a, b) in g.iter().zip(&fd) {
                assert!(rel_err(*a, *b) < 1e-5, "{a} vs {b}");
            }
            checked += 1;
        }
    }

    #[test]
    fn logistic_loss_non_increasing() {
        let (x, y) = three_class(300, 5);
        let (_, trace) = fit_logistic(&x, &y, &LogisticParams::default());
        assert_eq!(trace.len(), 501);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
    }

    /// Exhaustive search over directions and offsets on a 2-D toy set proves a
    /// separating line exists before asserting LR reaches full accuracy.
    #[test]
    fn logistic_separates_separable_data() {
        let rows = [[-2.0, -1.0], [-1.5, -2.0], [-1.0, -1.2], [1.0, 1.5], [2.0, 0.8], [1.2, 2.2]];
        let y = [High, High, High, Low, Low, Low];
        let mut separable = false;
        'search: for a in 0..360 {
            let th = (a as f64).to_radians();
            let (u, v) = (th.cos(), th.sin());
            for b in -40..=40 {
                let off = b as f64 * 0.1;
                if rows.iter().zip(&y).all(|(r, l)| ((u * r[0] + v * r[1] - off) > 0.0) == (*l == High)) {
                    separable = true;
                    break 'search;
                }
            }
        }
        assert!(separable);
        let x = FeatureMatrix::from_rows(&rows);
        let (m, _) = fit_logistic(&x, &y, &LogisticParams::default());
        for (r, l) in rows.iter().zip(&y) {
            assert_eq!(m.predict(r), *l);
        }
    }

    #[test]
    fn svm_learns_three_classes() {
        let (x, y) = three_class(300, 6);
        let m = fit_svm(&x, &y, &SvmParams::default());
        let acc = x.rows().zip(&y).filter(|(r, l)| m.predict(r) == **l).count() as f64 / 300.0;
        assert!(acc > 0.85, "{acc}");
    }
}
