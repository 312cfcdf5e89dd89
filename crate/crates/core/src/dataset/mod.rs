//! Microgrid energy-request observations and the labelled datasets built from
//! them.
//!
//! Raw traces are either read from CSV ([`load_csv`]) or synthesized
//! ([`generate_scenario`]). Features are standardized with population
//! statistics ([`fit_normalizer`]), clustered into three priority groups with
//! K-means ([`kmeans_fit`]) and labelled ([`label_dataset`]).

mod benchmark;
mod csv_io;
mod kmeans;
mod normalize;
mod scenario;
mod split;

pub use benchmark::{prepare_benchmark, Benchmark, BenchmarkConfig};
pub use csv_io::{load_csv, read_labeled_csv, write_labeled_csv, ColumnMapping};
pub use kmeans::{kmeans_fit, label_dataset, KMeansConfig, KMeansModel};
pub use normalize::{fit_normalizer, NormStats};
pub use scenario::{generate_scenario, Bounds, RegimeProfile, ScenarioProfile};
pub use split::{
    apportion_fraction, largest_remainder, split, split_indices, stratified_fraction_indices,
    stratified_subset_indices,
};

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Number of features in a [`MicrogridObservation`].
pub const FEATURE_DIM: usize = 6;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "consumption_kw",
    "pv_generation_kw",
    "wind_generation_kw",
    "battery_capacity_kwh",
    "battery_soc_frac",
    "hour_of_day",
];

/// Index of `hour_of_day` in the feature vector.
pub const HOUR_FEATURE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse row {row}, column `{column}`")]
    ParseError { row: usize, column: String },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("row {row}: {reason}")]
    InvalidObservation { row: usize, reason: String },
    #[error("invalid scenario profile: {0}")]
    InvalidProfile(String),
    #[error("feature {0} has zero variance")]
    ZeroVarianceFeature(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("fewer than {k} distinct points")]
    TooFewDistinctPoints { k: usize },
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("class {label} has only {count} samples")]
    ClassTooSmall { label: PriorityLabel, count: usize },
    #[error("invalid train fraction {0}")]
    InvalidFraction(f64),
    #[error("dataset is not labelled at row {0}")]
    Unlabeled(usize),
    #[error("dataset has no normalization statistics")]
    NotStandardized,
    #[error("invalid k-means configuration: {0}")]
    InvalidKMeans(String),
    #[error("pool has {available} {label} samples, {required} required")]
    InsufficientClassSamples {
        label: PriorityLabel,
        available: usize,
        required: usize,
    },
}

/// Priority of an energy request. Ordered by energy necessity: `High > Medium > Low`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorityLabel {
    High,
    Medium,
    Low,
}

impl PriorityLabel {
    /// In class-index order (0 = High).
    pub const ALL: [PriorityLabel; 3] = [PriorityLabel::High, PriorityLabel::Medium, PriorityLabel::Low];
    pub const COUNT: usize = 3;

    /// Class index used by the classifiers: High = 0, Medium = 1, Low = 2.
    /// A lower index is a higher priority.
    pub fn index(self) -> usize {
        match self {
            PriorityLabel::High => 0,
            PriorityLabel::Medium => 1,
            PriorityLabel::Low => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PriorityLabel::High => "high",
            PriorityLabel::Medium => "medium",
            PriorityLabel::Low => "low",
        }
    }
}

impl Ord for PriorityLabel {
    fn cmp(&self, other: &Self) -> Ordering {
        other.index().cmp(&self.index())
    }
}

impl PartialOrd for PriorityLabel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PriorityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriorityLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(PriorityLabel::High),
            "medium" => Ok(PriorityLabel::Medium),
            "low" => Ok(PriorityLabel::Low),
            other => Err(format!("unknown priority label `{other}`")),
        }
    }
}

/// Whether a row was observed or synthesized by the CGAN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    Generated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Generated => "generated",
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" => Ok(Provenance::Real),
            "generated" => Ok(Provenance::Generated),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

/// One energy request as sent by a microgrid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicrogridObservation {
    /// Aggregated household demand.
    pub consumption_kw: f64,
    pub pv_generation_kw: f64,
    pub wind_generation_kw: f64,
    pub battery_capacity_kwh: f64,
    pub battery_soc_frac: f64,
    pub hour_of_day: u8,
}

impl MicrogridObservation {
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        [
            self.consumption_kw,
            self.pv_generation_kw,
            self.wind_generation_kw,
            self.battery_capacity_kwh,
            self.battery_soc_frac,
            f64::from(self.hour_of_day),
        ]
    }

    /// Builds an observation from a raw feature vector, projecting it onto the
    /// valid domain: powers clipped at zero, state of charge to `[0, 1]`, hour
    /// rounded and clamped to `0..=23`.
    pub fn from_features_clipped(x: &[f64]) -> Result<Self, DatasetError> {
        if x.len() != FEATURE_DIM {
            return Err(DatasetError::DimensionMismatch {
                expected: FEATURE_DIM,
                actual: x.len(),
            });
        }
        let nonneg = |v: f64| if v.is_finite() { v.max(0.0) } else { 0.0 };
        let soc = if x[4].is_finite() { x[4].clamp(0.0, 1.0) } else { 0.0 };
        let hour = if x[5].is_finite() { x[5].round().clamp(0.0, 23.0) } else { 0.0 };
        Ok(Self {
            consumption_kw: nonneg(x[0]),
            pv_generation_kw: nonneg(x[1]),
            wind_generation_kw: nonneg(x[2]),
            battery_capacity_kwh: nonneg(x[3]),
            battery_soc_frac: soc,
            hour_of_day: hour as u8,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        let powers = [
            ("consumption_kw", self.consumption_kw),
            ("pv_generation_kw", self.pv_generation_kw),
            ("wind_generation_kw", self.wind_generation_kw),
            ("battery_capacity_kwh", self.battery_capacity_kwh),
        ];
        for (name, v) in powers {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.battery_soc_frac) {
            return Err(format!(
                "battery_soc_frac must lie in [0, 1], got {}",
                self.battery_soc_frac
            ));
        }
        if self.hour_of_day > 23 {
            return Err(format!("hour_of_day must lie in 0..=23, got {}", self.hour_of_day));
        }
        Ok(())
    }

    /// Net demand over a one-hour horizon: consumption minus renewable
    /// generation minus the energy the battery can deliver within the hour.
    pub fn net_demand_kw(&self) -> f64 {
        const HORIZON_H: f64 = 1.0;
        self.consumption_kw
            - (self.pv_generation_kw + self.wind_generation_kw)
            - self.battery_capacity_kwh * self.battery_soc_frac / HORIZON_H
    }
}

/// Row-major dense feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    dim: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        assert_eq!(data.len() % dim, 0, "data length not a multiple of dim");
        Self { data, dim }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(FEATURE_DIM, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.as_ref().len(), dim, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { data, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { data, dim: self.dim }
    }
}

/// Ordered observations with parallel labels and provenance flags.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    observations: Vec<MicrogridObservation>,
    labels: Vec<Option<PriorityLabel>>,
    provenance: Vec<Provenance>,
    norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unlabeled(observations: Vec<MicrogridObservation>, provenance: Provenance) -> Self {
        let n = observations.len();
        Self {
            observations,
            labels: vec![None; n],
            provenance: vec![provenance; n],
            norm_stats: None,
        }
    }

    pub fn push(&mut self, obs: MicrogridObservation, label: Option<PriorityLabel>, provenance: Provenance) {
        self.observations.push(obs);
        self.labels.push(label);
        self.provenance.push(provenance);
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[MicrogridObservation] {
        &self.observations
    }

    pub fn labels(&self) -> &[Option<PriorityLabel>] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm_stats.as_ref()
    }

    pub fn set_norm_stats(&mut self, stats: NormStats) {
        self.norm_stats = Some(stats);
    }

    pub fn clear_norm_stats(&mut self) {
        self.norm_stats = None;
    }

    pub fn with_norm_stats(mut self, stats: NormStats) -> Self {
        self.norm_stats = Some(stats);
        self
    }

    /// Replaces every label. `labels` must have one entry per observation.
    pub fn set_labels(&mut self, labels: Vec<PriorityLabel>) {
        assert_eq!(labels.len(), self.len(), "label count mismatch");
        self.labels = labels.into_iter().map(Some).collect();
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// All labels, or the first unlabelled row.
    pub fn require_labels(&self) -> Result<Vec<PriorityLabel>, DatasetError> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or(DatasetError::Unlabeled(i)))
            .collect()
    }

    pub fn raw_features(&self) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.len() * FEATURE_DIM);
        for o in &self.observations {
            data.extend_from_slice(&o.features());
        }
        FeatureMatrix::new(data, FEATURE_DIM)
    }

    /// Features standardized with this dataset's own statistics.
    pub fn standardized(&self) -> Result<FeatureMatrix, DatasetError> {
        let stats = self.norm_stats.as_ref().ok_or(DatasetError::NotStandardized)?;
        Ok(stats.standardize_matrix(&self.raw_features()))
    }

    /// Rows at `indices`, in that order. Normalization statistics are kept.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            observations: indices.iter().map(|&i| self.observations[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// Appends `other`'s rows. Normalization statistics of `self` are dropped
    /// since they no longer describe the data.
    pub fn extend(&mut self, other: &Dataset) {
        self.observations.extend_from_slice(&other.observations);
        self.labels.extend_from_slice(&other.labels);
        self.provenance.extend_from_slice(&other.provenance);
        self.norm_stats = None;
    }

    pub fn indices_with_label(&self, label: PriorityLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(label))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn indices_with_provenance(&self, provenance: Provenance) -> Vec<usize> {
        self.provenance
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == provenance)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-class counts in class-index order.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for l in self.labels.iter().flatten() {
            counts[l.index()] += 1;
        }
        counts
    }

    pub fn count_provenance(&self, provenance: Provenance) -> usize {
        self.provenance.iter().filter(|p| **p == provenance).count()
    }
}
