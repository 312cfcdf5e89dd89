//! Fully connected layers with optional batch normalization, manual backprop
//! and Adam.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

pub(crate) const LEAKY_SLOPE: f64 = 0.2;
pub(crate) const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::LeakyRelu => z.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Identity => z.clone(),
        }
    }

    fn backward(self, z: &Array2<f64>, out: &Array2<f64>, d_out: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => ndarray::Zip::from(d_out).and(z).map_collect(|&d, &v| if v > 0.0 { d } else { 0.0 }),
            Activation::LeakyRelu => {
                ndarray::Zip::from(d_out).and(z).map_collect(|&d, &v| if v > 0.0 { d } else { LEAKY_SLOPE * d })
            }
            Activation::Tanh => ndarray::Zip::from(d_out).and(out).map_collect(|&d, &y| d * (1.0 - y * y)),
            Activation::Identity => d_out.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    HeUniform,
    XavierUniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// Shape `(fan_in, fan_out)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub bn: Option<BatchNorm>,
    pub act: Activation,
}

struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

pub struct LayerCache {
    input: Array2<f64>,
    bn: Option<BnCache>,
    /// Input to the activation.
    z: Array2<f64>,
    out: Array2<f64>,
}

impl Dense {
    pub fn new(fan_in: usize, fan_out: usize, act: Activation, batch_norm: bool, init: Init, rng: &mut Rng) -> Self {
        let limit = match init {
            Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
            Init::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
        let bn = batch_norm.then(|| BatchNorm {
            gamma: Array1::ones(fan_out),
            beta: Array1::zeros(fan_out),
            running_mean: Array1::zeros(fan_out),
            running_var: Array1::ones(fan_out),
        });
        Self {
            w,
            b: Array1::zeros(fan_out),
            bn,
            act,
        }
    }

    fn forward(&self, x: &Array2<f64>, mode: Mode) -> LayerCache {
        let a = x.dot(&self.w) + &self.b;
        let (z, bn) = match (&self.bn, mode) {
            (None, _) => (a, None),
            (Some(bn), Mode::Train) => {
                let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
                let centered = &a - &mean;
                let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xhat = centered * &inv_std;
                let z = &xhat * &bn.gamma + &bn.beta;
                (
                    z,
                    Some(BnCache {
                        xhat,
                        inv_std,
                        mean,
                        var,
                    }),
                )
            }
            (Some(bn), Mode::Eval) => {
                let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let z = (a - &bn.running_mean) * &inv_std * &bn.gamma + &bn.beta;
                (z, None)
            }
        };
        let out = self.act.apply(&z);
        LayerCache {
            input: x.clone(),
            bn,
            z,
            out,
        }
    }

    /// Returns parameter gradients in [`Dense::tensors`] order and the input
    /// gradient.
    fn backward(&self, cache: &LayerCache, d_out: &Array2<f64>) -> (Vec<Vec<f64>>, Array2<f64>) {
        let dz = self.act.backward(&cache.z, &cache.out, d_out);
        let mut grads = Vec::with_capacity(4);
        let (da, bn_grads) = match (&self.bn, &cache.bn) {
            (Some(bn), Some(c)) => {
                let n = dz.nrows() as f64;
                let dgamma = (&dz * &c.xhat).sum_axis(Axis(0));
                let dbeta = dz.sum_axis(Axis(0));
                let dxhat = &dz * &bn.gamma;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
                let da = (dxhat * n - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * &(&c.inv_std / n);
                (da, Some((dgamma, dbeta)))
            }
            (Some(_), None) => panic!("backward through batch norm requires a training-mode forward"),
            _ => (dz, None),
        };
        let dw = cache.input.t().dot(&da);
        let db = da.sum_axis(Axis(0));
        let d_input = da.dot(&self.w.t());
        grads.push(dw.into_raw_vec_and_offset().0);
        grads.push(db.to_vec());
        if let Some((dg, dbeta)) = bn_grads {
            grads.push(dg.to_vec());
            grads.push(dbeta.to_vec());
        }
        (grads, d_input)
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![self.w.as_slice().expect("standard layout"), self.b.as_slice().expect("contiguous")];
        if let Some(bn) = &self.bn {
            v.push(bn.gamma.as_slice().expect("contiguous"));
            v.push(bn.beta.as_slice().expect("contiguous"));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("contiguous"),
        ];
        if let Some(bn) = &mut self.bn {
            v.push(bn.gamma.as_slice_mut().expect("contiguous"));
            v.push(bn.beta.as_slice_mut().expect("contiguous"));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, Vec<LayerCache>) {
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = caches.last().map_or(x, |c| &c.out);
            let c = layer.forward(input, mode);
            caches.push(c);
        }
        let out = caches.last().map_or_else(|| x.clone(), |c| c.out.clone());
        (out, caches)
    }

    pub fn backward(&self, caches: &[LayerCache], d_out: &Array2<f64>) -> (Vec<Vec<f64>>, Array2<f64>) {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let (g, di) = layer.backward(cache, &d);
            per_layer.push(g);
            d = di;
        }
        (per_layer.into_iter().rev().flatten().collect(), d)
    }

    pub fn update_running_stats(&mut self, caches: &[LayerCache], momentum: f64) {
        for (layer, cache) in self.layers.iter_mut().zip(caches) {
            if let (Some(bn), Some(c)) = (&mut layer.bn, &cache.bn) {
                bn.running_mean = &bn.running_mean * momentum + &c.mean * (1.0 - momentum);
                bn.running_var = &bn.running_var * momentum + &c.var * (1.0 - momentum);
            }
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>], lr: f64, beta1: f64, beta2: f64) {
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        }
    }
}
