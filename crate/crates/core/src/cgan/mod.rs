//! Label-conditioned GAN over tabular microgrid features.
//!
//! Generator: `[z, emb_g(y)] -> 64 -> BN -> ReLU -> 64 -> BN -> ReLU -> d -> tanh`.
//! Discriminator: `[x, emb_d(y)] -> 64 -> LeakyReLU -> 64 -> LeakyReLU -> 1 -> sigmoid`.
//! Features are min/max scaled to `[-1, 1]` for training and mapped back to raw
//! units when sampling. The discriminator minimizes the binary cross-entropy
//! of the minimax game; the generator minimizes `-log D(G(z, y), y)`.

mod net;
mod scaler;

pub use net::{Activation, Adam, BatchNorm, Dense, Mlp};
pub use scaler::MinMaxScaler;

use ndarray::{s, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::dataset::{
    largest_remainder, Dataset, FeatureMatrix, MicrogridObservation, PriorityLabel, Provenance, FEATURE_DIM,
};
use crate::seed::{derive_seed, rng_from_seed, Rng};
use net::{Init, LayerCache, Mode};

const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CganError {
    #[error("invalid CGAN config: {0}")]
    InvalidConfig(String),
    #[error("discriminator score outside (0, 1)")]
    ScoreOutOfRange,
    #[error("empty score batch")]
    EmptyBatch,
    #[error("non-finite gradient{}", .epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFiniteGradient { epoch: Option<usize> },
    #[error("training data is empty")]
    EmptyData,
    #[error("training data must be labelled")]
    Unlabeled,
    #[error("training data must contain only real observations")]
    GeneratedTrainingData,
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("sample count must be >= 1")]
    InvalidSampleCount,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CganConfig {
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub gen_layers: Vec<usize>,
    pub disc_layers: Vec<usize>,
    pub epochs: usize,
    /// Discriminator batch: half real, half generated.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Early stop once discriminator accuracy stays inside this band ...
    pub accuracy_band: (f64, f64),
    /// ... for this many consecutive epochs.
    pub patience: usize,
    /// Epochs that always run before early stopping is considered.
    pub min_epochs: usize,
    pub seed: u64,
}

impl Default for CganConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            embed_dim: 16,
            gen_layers: vec![64, 64],
            disc_layers: vec![64, 64],
            epochs: 2000,
            batch_size: 64,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            accuracy_band: (0.45, 0.55),
            patience: 20,
            min_epochs: 0,
            seed: 0,
        }
    }
}

impl CganConfig {
    pub fn validate(&self) -> Result<(), CganError> {
        let bad = |m: &str| Err(CganError::InvalidConfig(m.into()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1");
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return bad("batch_size must be even and >= 2");
        }
        if self.gen_layers.contains(&0) || self.disc_layers.contains(&0) {
            return bad("layer widths must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must be in [0, 1)");
        }
        let (lo, hi) = self.accuracy_band;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("accuracy_band must satisfy 0 <= lo <= hi <= 1");
        }
        Ok(())
    }
}

/// An MLP whose input is the caller's matrix concatenated with a learned
/// per-label embedding row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalNet {
    pub embedding: Array2<f64>,
    pub mlp: Mlp,
}

struct NetPass {
    out: Array2<f64>,
    caches: Vec<LayerCache>,
}

impl ConditionalNet {
    fn new(in_dim: usize, embed_dim: usize, widths: &[usize], out_dim: usize, generator: bool, rng: &mut Rng) -> Self {
        let embedding = Array2::from_shape_fn((PriorityLabel::COUNT, embed_dim), |_| rng.sample(StandardNormal));
        let mut layers = Vec::new();
        let mut fan_in = in_dim + embed_dim;
        let hidden = if generator { Activation::Relu } else { Activation::LeakyRelu };
        for &w in widths {
            layers.push(Dense::new(fan_in, w, hidden, generator, Init::HeUniform, rng));
            fan_in = w;
        }
        let out_act = if generator { Activation::Tanh } else { Activation::Identity };
        layers.push(Dense::new(fan_in, out_dim, out_act, false, Init::XavierUniform, rng));
        Self {
            embedding,
            mlp: Mlp { layers },
        }
    }

    fn input_dim(&self) -> usize {
        self.mlp.layers[0].w.nrows() - self.embedding.ncols()
    }

    fn forward(&self, x: &Array2<f64>, labels: &[PriorityLabel], mode: Mode) -> NetPass {
        let d = x.ncols();
        let e = self.embedding.ncols();
        let mut input = Array2::zeros((x.nrows(), d + e));
        input.slice_mut(s![.., ..d]).assign(x);
        for (i, l) in labels.iter().enumerate() {
            input.slice_mut(s![i, d..]).assign(&self.embedding.row(l.index()));
        }
        let (out, caches) = self.mlp.forward(&input, mode);
        NetPass { out, caches }
    }

    /// Parameter gradients in [`ConditionalNet::tensors`] order, and the
    /// gradient with respect to the non-embedding input columns.
    fn backward(&self, pass: &NetPass, d_out: &Array2<f64>, labels: &[PriorityLabel]) -> (Vec<Vec<f64>>, Array2<f64>) {
        let (mut grads, d_in) = self.mlp.backward(&pass.caches, d_out);
        let d = self.input_dim();
        let e = self.embedding.ncols();
        let mut d_emb = vec![0.0; PriorityLabel::COUNT * e];
        for (i, l) in labels.iter().enumerate() {
            for k in 0..e {
                d_emb[l.index() * e + k] += d_in[[i, d + k]];
            }
        }
        grads.push(d_emb);
        (grads, d_in.slice(s![.., ..d]).to_owned())
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.mlp.tensors();
        t.push(self.embedding.as_slice().expect("standard layout"));
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.mlp.tensors_mut();
        t.push(self.embedding.as_slice_mut().expect("standard layout"));
        t
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CganModel {
    pub config: CganConfig,
    pub feature_dim: usize,
    pub generator: ConditionalNet,
    pub discriminator: ConditionalNet,
    pub g_optimizer: Adam,
    pub d_optimizer: Adam,
    /// Fitted on the first call to [`cgan_train`]; `None` means features are
    /// already in `[-1, 1]`.
    pub scaler: Option<MinMaxScaler>,
}

/// Losses and discriminator accuracy for one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), CganError> {
        let err = |e: csv::Error| CganError::Checkpoint(e.to_string());
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(err)?;
        w.write_record(["epoch", "d_loss", "g_loss", "d_accuracy"]).map_err(err)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.d_loss.to_string(),
                e.g_loss.to_string(),
                e.d_accuracy.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| CganError::Checkpoint(e.to_string()))
    }
}

fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^l)` without overflow.
fn softplus(l: f64) -> f64 {
    l.max(0.0) + (-l.abs()).exp().ln_1p()
}

/// Losses from discriminator scores in `(0, 1)`:
/// `d_loss = -mean(ln d_real) - mean(ln(1 - d_fake))`, `g_loss = -mean(ln d_fake)`.
pub fn gan_loss(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64), CganError> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(CganError::EmptyBatch);
    }
    if d_real.iter().chain(d_fake).any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(CganError::ScoreOutOfRange);
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&s| f(s)).sum::<f64>() / v.len() as f64;
    let d_loss = -mean(d_real, &|s| s.ln()) - mean(d_fake, &|s| (-s).ln_1p());
    let g_loss = -mean(d_fake, &|s| s.ln());
    Ok((d_loss, g_loss))
}

fn all_finite(grads: &[Vec<f64>]) -> bool {
    grads.iter().flatten().all(|g| g.is_finite())
}

/// Builds a freshly initialized model. Deterministic in `config.seed`.
pub fn cgan_init(config: &CganConfig, feature_dim: usize) -> Result<CganModel, CganError> {
    config.validate()?;
    if feature_dim == 0 {
        return Err(CganError::InvalidConfig("feature_dim must be >= 1".into()));
    }
    let mut rng = rng_from_seed(derive_seed(config.seed, "cgan-init"));
    let generator = ConditionalNet::new(config.latent_dim, config.embed_dim, &config.gen_layers, feature_dim, true, &mut rng);
    let discriminator = ConditionalNet::new(feature_dim, config.embed_dim, &config.disc_layers, 1, false, &mut rng);
    Ok(CganModel {
        g_optimizer: Adam::new(&generator.sizes()),
        d_optimizer: Adam::new(&discriminator.sizes()),
        config: config.clone(),
        feature_dim,
        generator,
        discriminator,
        scaler: None,
    })
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

impl CganModel {
    pub fn n_params(&self) -> usize {
        self.generator.n_params() + self.discriminator.n_params()
    }

    /// Discriminator loss on labelled real and generated rows, its parameter
    /// gradients and the discriminator's accuracy.
    pub(crate) fn discriminator_loss_grad(
        &self,
        real: &Array2<f64>,
        real_y: &[PriorityLabel],
        fake: &Array2<f64>,
        fake_y: &[PriorityLabel],
    ) -> (f64, Vec<Vec<f64>>, f64) {
        let d = &self.discriminator;
        let pr = d.forward(real, real_y, Mode::Train);
        let pf = d.forward(fake, fake_y, Mode::Train);
        let (nr, nf) = (real.nrows() as f64, fake.nrows() as f64);
        let lr = pr.out.column(0);
        let lf = pf.out.column(0);
        let loss = lr.iter().map(|&l| softplus(-l)).sum::<f64>() / nr + lf.iter().map(|&l| softplus(l)).sum::<f64>() / nf;
        let correct = lr.iter().filter(|&&l| l > 0.0).count() + lf.iter().filter(|&&l| l < 0.0).count();
        let accuracy = correct as f64 / (nr + nf);
        let dr = pr.out.mapv(|l| (sigmoid(l) - 1.0) / nr);
        let df = pf.out.mapv(|l| sigmoid(l) / nf);
        let (gr, _) = d.backward(&pr, &dr, real_y);
        let (gf, _) = d.backward(&pf, &df, fake_y);
        let grads = gr
            .into_iter()
            .zip(gf)
            .map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x + y).collect())
            .collect();
        (loss, grads, accuracy)
    }

    /// Non-saturating generator loss for latent rows `z`, its gradients with
    /// respect to generator parameters (discriminator held fixed), and the
    /// generator pass for running-statistics updates.
    fn generator_loss_grad_pass(&self, z: &Array2<f64>, y: &[PriorityLabel]) -> (f64, Vec<Vec<f64>>, NetPass) {
        let gp = self.generator.forward(z, y, Mode::Train);
        let dp = self.discriminator.forward(&gp.out, y, Mode::Train);
        let n = z.nrows() as f64;
        let loss = dp.out.iter().map(|&l| softplus(-l)).sum::<f64>() / n;
        let dl = dp.out.mapv(|l| (sigmoid(l) - 1.0) / n);
        let (_, dx) = self.discriminator.backward(&dp, &dl, y);
        let (grads, _) = self.generator.backward(&gp, &dx, y);
        (loss, grads, gp)
    }

    #[cfg(test)]
    pub(crate) fn generator_loss_grad(&self, z: &Array2<f64>, y: &[PriorityLabel]) -> (f64, Vec<Vec<f64>>) {
        let (l, g, _) = self.generator_loss_grad_pass(z, y);
        (l, g)
    }

    /// Generator output in scaled space, using running batch-norm statistics.
    pub fn generate_scaled(&self, label: PriorityLabel, n: usize, rng: &mut Rng) -> Array2<f64> {
        let z = normal_matrix(n, self.config.latent_dim, rng);
        self.generator.forward(&z, &vec![label; n], Mode::Eval).out
    }

    /// Versioned JSON checkpoint holding config, scaler, parameters and
    /// optimizer state.
    pub fn to_json(&self) -> Result<String, CganError> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self,
        };
        serde_json::to_string(&ck).map_err(|e| CganError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, CganError> {
        let ck: Checkpoint<CganModel> = serde_json::from_str(s).map_err(|e| CganError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(CganError::Checkpoint(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        Ok(ck.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CganError> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| CganError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CganError> {
        let s = std::fs::read_to_string(path.as_ref())
            .map_err(|e| CganError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&s)
    }
}

const CHECKPOINT_FORMAT: &str = "v2m-aml/cgan";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    format: String,
    version: u32,
    model: T,
}

/// Largest disagreement between analytic and central-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`, maximized
    /// over every generator and discriminator parameter.
    pub max_rel_error: f64,
    pub n_params: usize,
}

/// Returns scalar `i` of tensor `t`, overwriting it with `value` if given.
fn set_param(m: &mut CganModel, generator: bool, t: usize, i: usize, value: Option<f64>) -> f64 {
    let net = if generator { &mut m.generator } else { &mut m.discriminator };
    let slot = &mut net.tensors_mut()[t][i];
    let old = *slot;
    if let Some(v) = value {
        *slot = v;
    }
    old
}

/// Checks both networks of a freshly initialized model on a random batch of
/// `batch` scaled rows, perturbing each parameter by `h`.
pub fn gradient_check(config: &CganConfig, feature_dim: usize, batch: usize, h: f64) -> Result<GradientCheck, CganError> {
    if batch == 0 {
        return Err(CganError::EmptyData);
    }
    let model = cgan_init(config, feature_dim)?;
    let mut rng = rng_from_seed(derive_seed(config.seed, "gradient-check"));
    let real = Array2::from_shape_fn((batch, feature_dim), |_| rng.random_range(-1.0..1.0));
    let fake = Array2::from_shape_fn((batch, feature_dim), |_| rng.random_range(-1.0..1.0));
    let z = normal_matrix(batch, config.latent_dim, &mut rng);
    let y: Vec<_> = (0..batch).map(|i| PriorityLabel::ALL[i % PriorityLabel::COUNT]).collect();

    let d_loss = |m: &CganModel| m.discriminator_loss_grad(&real, &y, &fake, &y).0;
    let g_loss = |m: &CganModel| m.generator_loss_grad_pass(&z, &y).0;
    let (_, d_grads, _) = model.discriminator_loss_grad(&real, &y, &fake, &y);
    let (_, g_grads, _) = model.generator_loss_grad_pass(&z, &y);

    let mut worst: f64 = 0.0;
    let mut n_params = 0;
    for (generator, grads) in [(false, &d_grads), (true, &g_grads)] {
        let loss: &dyn Fn(&CganModel) -> f64 = if generator { &g_loss } else { &d_loss };
        let mut m = model.clone();
        for (t, g) in grads.iter().enumerate() {
            for (i, &analytic) in g.iter().enumerate() {
                let orig = set_param(&mut m, generator, t, i, None);
                set_param(&mut m, generator, t, i, Some(orig + h));
                let up = loss(&m);
                set_param(&mut m, generator, t, i, Some(orig - h));
                let down = loss(&m);
                set_param(&mut m, generator, t, i, Some(orig));
                let numeric = (up - down) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                n_params += 1;
            }
        }
    }
    Ok(GradientCheck {
        max_rel_error: worst,
        n_params,
    })
}

/// One discriminator update on `real` plus as many generated rows with the
/// same labels, then one generator update through the updated discriminator.
/// `real` must already be scaled to `[-1, 1]`.
pub fn train_step(
    model: &mut CganModel,
    real: &Array2<f64>,
    labels: &[PriorityLabel],
    rng: &mut Rng,
) -> Result<StepLosses, CganError> {
    if real.ncols() != model.feature_dim {
        return Err(CganError::DimensionMismatch {
            expected: model.feature_dim,
            actual: real.ncols(),
        });
    }
    if real.nrows() != labels.len() || labels.is_empty() {
        return Err(CganError::EmptyData);
    }
    let cfg = &model.config;
    let (lr, b1, b2) = (cfg.learning_rate, cfg.beta1, cfg.beta2);
    let n = labels.len();

    let z = normal_matrix(n, cfg.latent_dim, rng);
    let fake = model.generator.forward(&z, labels, Mode::Train).out;
    let (d_loss, d_grads, d_accuracy) = model.discriminator_loss_grad(real, labels, &fake, labels);
    if !d_loss.is_finite() || !all_finite(&d_grads) {
        return Err(CganError::NonFiniteGradient { epoch: None });
    }
    model.d_optimizer.step(model.discriminator.tensors_mut(), &d_grads, lr, b1, b2);

    let z = normal_matrix(n, model.config.latent_dim, rng);
    let (g_loss, g_grads, pass) = model.generator_loss_grad_pass(&z, labels);
    if !g_loss.is_finite() || !all_finite(&g_grads) {
        return Err(CganError::NonFiniteGradient { epoch: None });
    }
    model.g_optimizer.step(model.generator.tensors_mut(), &g_grads, lr, b1, b2);
    model.generator.mlp.update_running_stats(&pass.caches, BN_MOMENTUM);

    Ok(StepLosses {
        d_loss,
        g_loss,
        d_accuracy,
    })
}

/// Trains on a labelled, all-real dataset with class-balanced batches drawn
/// with replacement. An epoch is `ceil(n / (batch_size / 2))` steps.
pub fn cgan_train(model: &mut CganModel, data: &Dataset) -> Result<TrainingTrace, CganError> {
    if data.is_empty() {
        return Err(CganError::EmptyData);
    }
    if model.feature_dim != FEATURE_DIM {
        return Err(CganError::DimensionMismatch {
            expected: FEATURE_DIM,
            actual: model.feature_dim,
        });
    }
    data.require_labels().map_err(|_| CganError::Unlabeled)?;
    if data.count_provenance(Provenance::Real) != data.len() {
        return Err(CganError::GeneratedTrainingData);
    }
    let raw = data.raw_features();
    let scaler = model.scaler.get_or_insert_with(|| MinMaxScaler::fit(&raw)).clone();
    let scaled: Vec<Vec<f64>> = raw.rows().map(|r| scaler.scale(r)).collect();
    let by_class: Vec<Vec<usize>> = PriorityLabel::ALL.iter().map(|&l| data.indices_with_label(l)).collect();

    let half = model.config.batch_size / 2;
    let present: Vec<usize> = by_class.iter().map(|v| usize::from(!v.is_empty())).collect();
    let quotas = largest_remainder(&present, half);
    let steps = data.len().div_ceil(half);
    let mut rng = rng_from_seed(derive_seed(model.config.seed, "cgan-train"));
    let mut trace = TrainingTrace::default();
    let mut in_band = 0usize;
    let (band_lo, band_hi) = model.config.accuracy_band;

    for epoch in 0..model.config.epochs {
        let mut sum = StepLosses {
            d_loss: 0.0,
            g_loss: 0.0,
            d_accuracy: 0.0,
        };
        for _ in 0..steps {
            let mut batch = Array2::zeros((half, model.feature_dim));
            let mut batch_y = Vec::with_capacity(half);
            for (c, &q) in quotas.iter().enumerate() {
                for _ in 0..q {
                    let i = by_class[c][rng.random_range(0..by_class[c].len())];
                    batch.row_mut(batch_y.len()).assign(&ndarray::ArrayView1::from(&scaled[i]));
                    batch_y.push(PriorityLabel::ALL[c]);
                }
            }
            let s = train_step(model, &batch, &batch_y, &mut rng).map_err(|e| match e {
                CganError::NonFiniteGradient { .. } => CganError::NonFiniteGradient { epoch: Some(epoch) },
                other => other,
            })?;
            sum.d_loss += s.d_loss;
            sum.g_loss += s.g_loss;
            sum.d_accuracy += s.d_accuracy;
        }
        let k = steps as f64;
        let stats = EpochStats {
            epoch,
            d_loss: sum.d_loss / k,
            g_loss: sum.g_loss / k,
            d_accuracy: sum.d_accuracy / k,
        };
        trace.epochs.push(stats);
        if (band_lo..=band_hi).contains(&stats.d_accuracy) {
            in_band += 1;
        } else {
            in_band = 0;
        }
        if in_band >= model.config.patience && epoch + 1 >= model.config.min_epochs {
            trace.stopped_early = true;
            break;
        }
    }
    Ok(trace)
}

/// Draws `n` labelled observations of class `label` in raw feature units,
/// clipped to the valid domain.
pub fn cgan_sample(model: &CganModel, label: PriorityLabel, n: usize, rng: &mut Rng) -> Result<Dataset, CganError> {
    if n == 0 {
        return Err(CganError::InvalidSampleCount);
    }
    if model.feature_dim != FEATURE_DIM {
        return Err(CganError::DimensionMismatch {
            expected: FEATURE_DIM,
            actual: model.feature_dim,
        });
    }
    let scaled = model.generate_scaled(label, n, rng);
    let mut out = Dataset::new();
    for row in scaled.rows() {
        let row = row.to_vec();
        let raw = match &model.scaler {
            Some(s) => s.unscale(&row),
            None => row,
        };
        let obs = MicrogridObservation::from_features_clipped(&raw).expect("feature_dim checked");
        out.push(obs, Some(label), Provenance::Generated);
    }
    Ok(out)
}

/// Converts raw observations to the model's scaled space.
pub fn scale_features(model: &CganModel, x: &FeatureMatrix) -> Array2<f64> {
    let mut out = Array2::zeros((x.n_rows(), x.dim()));
    for (i, r) in x.rows().enumerate() {
        let v = match &model.scaler {
            Some(s) => s.scale(r),
            None => r.to_vec(),
        };
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fit_normalizer, generate_scenario, label_dataset, kmeans_fit, KMeansConfig, ScenarioProfile};
    use PriorityLabel::*;

    fn tiny_config() -> CganConfig {
        CganConfig {
            latent_dim: 1,
            embed_dim: 1,
            gen_layers: vec![2],
            disc_layers: vec![2],
            batch_size: 12,
            seed: 7,
            ..Default::default()
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Central differences over every scalar in `net`'s tensors.
    fn finite_difference(
        model: &CganModel,
        which_generator: bool,
        loss: &dyn Fn(&CganModel) -> f64,
    ) -> Vec<Vec<f64>> {
        let h = 1e-5;
        let mut m = model.clone();
        let sizes = if which_generator { m.generator.sizes() } else { m.discriminator.sizes() };
        let mut out = Vec::new();
        for (t, &len) in sizes.iter().enumerate() {
            let mut g = Vec::with_capacity(len);
            for i in 0..len {
                let orig = set_param(&mut m, which_generator, t, i, None);
                set_param(&mut m, which_generator, t, i, Some(orig + h));
                let up = loss(&m);
                set_param(&mut m, which_generator, t, i, Some(orig - h));
                let down = loss(&m);
                set_param(&mut m, which_generator, t, i, Some(orig));
                g.push((up - down) / (2.0 * h));
            }
            out.push(g);
        }
        out
    }

    fn assert_grads_close(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) {
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(numeric) {
            for (x, y) in a.iter().zip(n) {
                assert!(rel_err(*x, *y) < 1e-4, "analytic {x} vs numeric {y}");
            }
        }
    }

    fn tiny_batch(rng: &mut Rng, n: usize) -> (Array2<f64>, Vec<PriorityLabel>) {
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|i| PriorityLabel::ALL[i % 3]).collect();
        (x, y)
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        let model = cgan_init(&tiny_config(), 1).unwrap();
        let mut rng = rng_from_seed(1);
        let (real, ry) = tiny_batch(&mut rng, 6);
        let (fake, fy) = tiny_batch(&mut rng, 6);
        let (_, analytic, _) = model.discriminator_loss_grad(&real, &ry, &fake, &fy);
        let numeric = finite_difference(&model, false, &|m| m.discriminator_loss_grad(&real, &ry, &fake, &fy).0);
        assert_grads_close(&analytic, &numeric);
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let model = cgan_init(&tiny_config(), 1).unwrap();
        let mut rng = rng_from_seed(2);
        let z = normal_matrix(6, 1, &mut rng);
        let y: Vec<_> = (0..6).map(|i| PriorityLabel::ALL[i % 3]).collect();
        let (_, analytic) = model.generator_loss_grad(&z, &y);
        let numeric = finite_difference(&model, true, &|m| m.generator_loss_grad(&z, &y).0);
        assert_grads_close(&analytic, &numeric);
    }

    #[test]
    fn public_gradient_check_covers_every_parameter() {
        let r = gradient_check(&tiny_config(), 1, 6, 1e-5).unwrap();
        assert_eq!(r.n_params, cgan_init(&tiny_config(), 1).unwrap().n_params());
        assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn default_gradients_match_finite_differences_on_a_subset() {
        // Spot-check the full-size networks on strided parameters.
        let model = cgan_init(&CganConfig::default(), FEATURE_DIM).unwrap();
        let mut rng = rng_from_seed(3);
        let real = Array2::from_shape_fn((8, FEATURE_DIM), |_| rng.random_range(-1.0..1.0));
        let z = normal_matrix(8, 64, &mut rng);
        let y: Vec<_> = (0..8).map(|i| PriorityLabel::ALL[i % 3]).collect();
        let fake = model.generator.forward(&z, &y, Mode::Train).out;
        let (_, gd, _) = model.discriminator_loss_grad(&real, &y, &fake, &y);
        let (_, gg) = model.generator_loss_grad(&z, &y);
        let h = 1e-5;
        for (gen, grads) in [(false, &gd), (true, &gg)] {
            for (t, g) in grads.iter().enumerate() {
                for i in (0..g.len()).step_by(97) {
                    let mut m = model.clone();
                    let eval = |m: &CganModel| {
                        if gen {
                            m.generator_loss_grad(&z, &y).0
                        } else {
                            m.discriminator_loss_grad(&real, &y, &fake, &y).0
                        }
                    };
                    let orig = set_param(&mut m, gen, t, i, None);
                    set_param(&mut m, gen, t, i, Some(orig + h));
                    let up = eval(&m);
                    set_param(&mut m, gen, t, i, Some(orig - h));
                    let down = eval(&m);
                    let fd = (up - down) / (2.0 * h);
                    assert!(rel_err(g[i], fd) < 1e-4, "tensor {t}[{i}]: {} vs {fd}", g[i]);
                }
            }
        }
    }

    #[test]
    fn loss_at_equilibrium() {
        let (d, g) = gan_loss(&[0.5; 4], &[0.5; 7]).unwrap();
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_near_perfect_discriminator() {
        let (d, _) = gan_loss(&[1.0 - 1e-12], &[1e-12]).unwrap();
        assert!(d < 1e-10);
    }

    #[test]
    fn loss_matches_scalar_recomputation() {
        let mut rng = rng_from_seed(9);
        let real: Vec<f64> = (0..13).map(|_| rng.random_range(0.01..0.99)).collect();
        let fake: Vec<f64> = (0..7).map(|_| rng.random_range(0.01..0.99)).collect();
        let (d, g) = gan_loss(&real, &fake).unwrap();
        let mut a = 0.0;
        for r in &real {
            a += r.ln();
        }
        let mut b = 0.0;
        let mut c = 0.0;
        for f in &fake {
            b += (1.0 - f).ln();
            c += f.ln();
        }
        assert!((d - (-a / 13.0 - b / 7.0)).abs() < 1e-12);
        assert!((g - (-c / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn logit_losses_agree_with_score_losses() {
        let model = cgan_init(&tiny_config(), 1).unwrap();
        let mut rng = rng_from_seed(4);
        let (real, ry) = tiny_batch(&mut rng, 6);
        let (fake, fy) = tiny_batch(&mut rng, 6);
        let (d_logit, _, _) = model.discriminator_loss_grad(&real, &ry, &fake, &fy);
        let scores = |x: &Array2<f64>, y: &[PriorityLabel]| -> Vec<f64> {
            model.discriminator.forward(x, y, Mode::Train).out.iter().map(|&l| sigmoid(l)).collect()
        };
        let (d_score, _) = gan_loss(&scores(&real, &ry), &scores(&fake, &fy)).unwrap();
        assert!((d_logit - d_score).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_scores() {
        assert_eq!(gan_loss(&[1.0], &[0.5]), Err(CganError::ScoreOutOfRange));
        assert_eq!(gan_loss(&[0.5], &[0.0]), Err(CganError::ScoreOutOfRange));
        assert_eq!(gan_loss(&[f64::NAN], &[0.5]), Err(CganError::ScoreOutOfRange));
        assert_eq!(gan_loss(&[], &[0.5]), Err(CganError::EmptyBatch));
    }

    #[test]
    fn init_is_deterministic_and_validated() {
        let c = CganConfig::default();
        assert_eq!(cgan_init(&c, 6).unwrap(), cgan_init(&c, 6).unwrap());
        let bad = CganConfig {
            latent_dim: 0,
            ..Default::default()
        };
        assert!(matches!(cgan_init(&bad, 6), Err(CganError::InvalidConfig(_))));
        let odd = CganConfig {
            batch_size: 5,
            ..Default::default()
        };
        assert!(matches!(cgan_init(&odd, 6), Err(CganError::InvalidConfig(_))));
    }

    #[test]
    fn parameter_count_matches_architecture() {
        let m = cgan_init(&CganConfig::default(), 6).unwrap();
        // generator: dense + BN affine per hidden layer, dense output, embeddings
        let g = (80 * 64 + 64 + 2 * 64) + (64 * 64 + 64 + 2 * 64) + (64 * 6 + 6) + 3 * 16;
        // discriminator: dense layers, embeddings
        let d = (22 * 64 + 64) + (64 * 64 + 64) + (64 + 1) + 3 * 16;
        assert_eq!(m.generator.n_params(), g);
        assert_eq!(m.discriminator.n_params(), d);
        assert_eq!(m.n_params(), g + d);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = CganConfig {
            learning_rate: 0.0,
            ..tiny_config()
        };
        let mut m = cgan_init(&cfg, 1).unwrap();
        let before = m.clone();
        let mut rng = rng_from_seed(5);
        let (x, y) = tiny_batch(&mut rng, 6);
        train_step(&mut m, &x, &y, &mut rng).unwrap();
        assert_eq!(m.generator.tensors(), before.generator.tensors());
        assert_eq!(m.discriminator.tensors(), before.discriminator.tensors());
    }

    #[test]
    fn train_step_is_deterministic() {
        let run = || {
            let mut m = cgan_init(&tiny_config(), 1).unwrap();
            let mut rng = rng_from_seed(6);
            let (x, y) = tiny_batch(&mut rng, 6);
            let l = train_step(&mut m, &x, &y, &mut rng).unwrap();
            (m, l)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_parameters_report_divergence() {
        let mut m = cgan_init(&tiny_config(), 1).unwrap();
        // Poison a weight directly; the next step must refuse it.
        m.discriminator.mlp.layers[0].w[[0, 0]] = f64::NAN;
        let mut rng = rng_from_seed(1);
        let (x, y) = tiny_batch(&mut rng, 6);
        assert_eq!(
            train_step(&mut m, &x, &y, &mut rng),
            Err(CganError::NonFiniteGradient { epoch: None })
        );
    }

    fn labelled_scenario(n: usize, seed: u64) -> Dataset {
        let mut d = generate_scenario(n, seed, &ScenarioProfile::default()).unwrap();
        d.set_norm_stats(fit_normalizer(&d.raw_features()).unwrap());
        let km = kmeans_fit(&d, &KMeansConfig::default(), seed).unwrap();
        label_dataset(&d, &km).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let cfg = CganConfig {
            epochs: 0,
            ..Default::default()
        };
        let mut m = cgan_init(&cfg, 6).unwrap();
        let before = m.clone();
        let trace = cgan_train(&mut m, &labelled_scenario(60, 1)).unwrap();
        assert!(trace.is_empty());
        assert_eq!(m.generator, before.generator);
        assert_eq!(m.discriminator, before.discriminator);
    }

    #[test]
    fn rejects_unlabelled_and_generated_data() {
        let mut m = cgan_init(&CganConfig::default(), 6).unwrap();
        let raw = generate_scenario(10, 1, &ScenarioProfile::default()).unwrap();
        assert_eq!(cgan_train(&mut m, &raw), Err(CganError::Unlabeled));
        let mut d = labelled_scenario(30, 2);
        let gen = cgan_sample(&cgan_init(&CganConfig::default(), 6).unwrap(), High, 2, &mut rng_from_seed(0)).unwrap();
        d.extend(&gen);
        assert_eq!(cgan_train(&mut m, &d), Err(CganError::GeneratedTrainingData));
        assert_eq!(cgan_train(&mut m, &Dataset::new()), Err(CganError::EmptyData));
    }

    #[test]
    fn samples_carry_label_and_are_valid() {
        let m = cgan_init(&CganConfig::default(), 6).unwrap();
        let mut rng = rng_from_seed(3);
        for l in PriorityLabel::ALL {
            let d = cgan_sample(&m, l, 1, &mut rng).unwrap();
            assert_eq!(d.labels(), &[Some(l)]);
            assert_eq!(d.provenance(), &[Provenance::Generated]);
            d.observations()[0].validate().unwrap();
        }
        assert_eq!(cgan_sample(&m, Low, 0, &mut rng), Err(CganError::InvalidSampleCount));
        let a = cgan_sample(&m, Low, 5, &mut rng_from_seed(1)).unwrap();
        let b = cgan_sample(&m, Low, 5, &mut rng_from_seed(1)).unwrap();
        assert_eq!(a.observations(), b.observations());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let mut m = cgan_init(&CganConfig { epochs: 2, ..Default::default() }, 6).unwrap();
        cgan_train(&mut m, &labelled_scenario(90, 4)).unwrap();
        let s = m.to_json().unwrap();
        let back = CganModel::from_json(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), s);
        let bad = s.replace("v2m-aml/cgan", "other");
        assert!(CganModel::from_json(&bad).is_err());
    }

    #[test]
    fn trace_csv_has_one_row_per_epoch() {
        let mut m = cgan_init(&CganConfig { epochs: 3, ..Default::default() }, 6).unwrap();
        let trace = cgan_train(&mut m, &labelled_scenario(60, 5)).unwrap();
        assert_eq!(trace.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        trace.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("epoch,d_loss,g_loss,d_accuracy"));
    }
}
