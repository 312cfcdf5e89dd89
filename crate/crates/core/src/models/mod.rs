//! From-scratch classifiers for the three-class priority problem.
//!
//! All six kinds share one surface: [`fit`] returns an immutable
//! [`TrainedClassifier`] whose [`TrainedClassifier::predict`] is a pure
//! function of the model and the input. Inputs are standardized feature
//! vectors; [`DeployedClassifier`] bundles a classifier with the statistics
//! that standardize raw observations for it.

mod knn;
mod linear;
mod metrics;
mod naive_bayes;
mod tree;

pub use knn::{KnnModel, KnnParams};
pub use linear::{
    fit_logistic, fit_svm, logistic_loss_and_grad, svm_objective_and_subgradient, LinearModel, LogisticParams,
    SvmParams,
};
pub use metrics::{evaluate, MetricsReport};
pub use naive_bayes::{GaussianNb, NaiveBayesParams};
pub use tree::{DecisionTree, ForestParams, MaxFeatures, RandomForest, TreeNode, TreeParams};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

use crate::dataset::{Dataset, FeatureMatrix, MicrogridObservation, NormStats, PriorityLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training set contains a single class")]
    SingleClassTrainingSet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{0} labels for {1} rows")]
    LabelCountMismatch(usize, usize),
    #[error("dataset: {0}")]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    DecisionTree,
    RandomForest,
    LogisticRegression,
    KNearestNeighbors,
    SupportVectorMachine,
    NaiveBayes,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::LogisticRegression,
        ModelKind::KNearestNeighbors,
        ModelKind::SupportVectorMachine,
        ModelKind::NaiveBayes,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::DecisionTree => "DT",
            ModelKind::RandomForest => "RF",
            ModelKind::LogisticRegression => "LR",
            ModelKind::KNearestNeighbors => "K-NN",
            ModelKind::SupportVectorMachine => "SVM",
            ModelKind::NaiveBayes => "NB",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match norm.as_str() {
            "dt" | "decisiontree" => ModelKind::DecisionTree,
            "rf" | "randomforest" => ModelKind::RandomForest,
            "lr" | "logisticregression" => ModelKind::LogisticRegression,
            "knn" | "knearestneighbors" => ModelKind::KNearestNeighbors,
            "svm" | "supportvectormachine" => ModelKind::SupportVectorMachine,
            "nb" | "naivebayes" => ModelKind::NaiveBayes,
            _ => return Err(format!("unknown model kind `{s}`")),
        })
    }
}

/// Hyperparameters for every kind; [`fit`] reads the section for its kind.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub knn: KnnParams,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub logistic: LogisticParams,
    pub svm: SvmParams,
    pub naive_bayes: NaiveBayesParams,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.knn.validate()?;
        self.tree.validate()?;
        self.forest.validate()?;
        self.logistic.validate()?;
        self.svm.validate()?;
        self.naive_bayes.validate()
    }
}

/// Kind-specific fitted state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierState {
    DecisionTree(DecisionTree),
    RandomForest(RandomForest),
    LogisticRegression(LinearModel),
    KNearestNeighbors(KnnModel),
    SupportVectorMachine(LinearModel),
    NaiveBayes(GaussianNb),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    feature_dim: usize,
    hyperparameters: Hyperparameters,
    state: ClassifierState,
}

impl TrainedClassifier {
    pub fn kind(&self) -> ModelKind {
        match self.state {
            ClassifierState::DecisionTree(_) => ModelKind::DecisionTree,
            ClassifierState::RandomForest(_) => ModelKind::RandomForest,
            ClassifierState::LogisticRegression(_) => ModelKind::LogisticRegression,
            ClassifierState::KNearestNeighbors(_) => ModelKind::KNearestNeighbors,
            ClassifierState::SupportVectorMachine(_) => ModelKind::SupportVectorMachine,
            ClassifierState::NaiveBayes(_) => ModelKind::NaiveBayes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyperparameters
    }

    pub fn state(&self) -> &ClassifierState {
        &self.state
    }

    pub fn predict(&self, x: &[f64]) -> Result<PriorityLabel, ModelError> {
        if x.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> PriorityLabel {
        match &self.state {
            ClassifierState::DecisionTree(m) => m.predict(x),
            ClassifierState::RandomForest(m) => m.predict(x),
            ClassifierState::LogisticRegression(m) => m.predict(x),
            ClassifierState::KNearestNeighbors(m) => m.predict(x),
            ClassifierState::SupportVectorMachine(m) => m.predict(x),
            ClassifierState::NaiveBayes(m) => m.predict(x),
        }
    }

    pub fn predict_all(&self, x: &FeatureMatrix) -> Result<Vec<PriorityLabel>, ModelError> {
        x.rows().map(|r| self.predict(r)).collect()
    }
}

fn check_training_set(x: &FeatureMatrix, y: &[PriorityLabel]) -> Result<(), ModelError> {
    if x.n_rows() != y.len() {
        return Err(ModelError::LabelCountMismatch(y.len(), x.n_rows()));
    }
    if y.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    Ok(())
}

fn distinct_classes(y: &[PriorityLabel]) -> usize {
    let mut seen = [false; 3];
    for l in y {
        seen[l.index()] = true;
    }
    seen.iter().filter(|s| **s).count()
}

/// Trains a classifier of `kind` on standardized features `x` with labels `y`.
/// Deterministic for a fixed seed; only the random forest consumes randomness.
pub fn fit(
    kind: ModelKind,
    x: &FeatureMatrix,
    y: &[PriorityLabel],
    hp: &Hyperparameters,
    seed: u64,
) -> Result<TrainedClassifier, ModelError> {
    check_training_set(x, y)?;
    let state = match kind {
        ModelKind::KNearestNeighbors => {
            hp.knn.validate()?;
            ClassifierState::KNearestNeighbors(KnnModel::fit(x, y, &hp.knn))
        }
        ModelKind::DecisionTree => {
            hp.tree.validate()?;
            ClassifierState::DecisionTree(DecisionTree::fit(x, y, &hp.tree))
        }
        ModelKind::RandomForest => {
            hp.forest.validate()?;
            ClassifierState::RandomForest(RandomForest::fit(x, y, &hp.forest, seed))
        }
        ModelKind::LogisticRegression => {
            hp.logistic.validate()?;
            if distinct_classes(y) < 2 {
                return Err(ModelError::SingleClassTrainingSet);
            }
            ClassifierState::LogisticRegression(fit_logistic(x, y, &hp.logistic).0)
        }
        ModelKind::SupportVectorMachine => {
            hp.svm.validate()?;
            if distinct_classes(y) < 2 {
                return Err(ModelError::SingleClassTrainingSet);
            }
            ClassifierState::SupportVectorMachine(fit_svm(x, y, &hp.svm))
        }
        ModelKind::NaiveBayes => {
            hp.naive_bayes.validate()?;
            ClassifierState::NaiveBayes(GaussianNb::fit(x, y, &hp.naive_bayes))
        }
    };
    Ok(TrainedClassifier {
        feature_dim: x.dim(),
        hyperparameters: hp.clone(),
        state,
    })
}

/// Fits on a labelled dataset, standardized with its own statistics.
pub fn fit_dataset(kind: ModelKind, train: &Dataset, hp: &Hyperparameters, seed: u64) -> Result<TrainedClassifier, ModelError> {
    let x = train.standardized()?;
    let y = train.require_labels()?;
    fit(kind, &x, &y, hp, seed)
}

/// A classifier together with the statistics that standardize its raw inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeployedClassifier {
    pub normalizer: NormStats,
    pub classifier: TrainedClassifier,
}

const CHECKPOINT_FORMAT: &str = "v2m-aml/classifier";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    format: String,
    version: u32,
    model: T,
}

impl DeployedClassifier {
    /// Trains `kind` on `train`, standardized with `train`'s statistics.
    pub fn train(kind: ModelKind, train: &Dataset, hp: &Hyperparameters, seed: u64) -> Result<Self, ModelError> {
        let normalizer = train
            .norm_stats()
            .cloned()
            .ok_or(crate::dataset::DatasetError::NotStandardized)?;
        Ok(Self {
            classifier: fit_dataset(kind, train, hp, seed)?,
            normalizer,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.classifier.kind()
    }

    pub fn predict_observation(&self, o: &MicrogridObservation) -> PriorityLabel {
        self.classifier.predict_unchecked(&self.normalizer.standardize(&o.features()))
    }

    pub fn predict_raw(&self, x: &[f64]) -> Result<PriorityLabel, ModelError> {
        if x.len() != self.normalizer.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.normalizer.dim(),
                actual: x.len(),
            });
        }
        self.classifier.predict(&self.normalizer.standardize(x))
    }

    /// Versioned JSON checkpoint. Saving a loaded checkpoint reproduces the
    /// original bytes.
    pub fn to_json(&self) -> Result<String, ModelError> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self,
        };
        serde_json::to_string_pretty(&ck).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint<DeployedClassifier> =
            serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            ModelError::Checkpoint(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&s)
    }
}

/// Majority vote over per-class tallies; ties go to the higher priority.
pub(crate) fn argmax_priority(scores: &[f64; 3]) -> PriorityLabel {
    let mut best = 0;
    for c in 1..3 {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    PriorityLabel::ALL[best]
}
