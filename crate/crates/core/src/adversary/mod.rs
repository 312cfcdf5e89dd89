//! The adversary's pipeline: collect part of the edge's training traffic,
//! optionally fill the gap with CGAN samples, pick the best of six surrogate
//! classifiers, then craft evasion samples against that surrogate.

mod evasion;

pub use evasion::{craft_evasion, EvasionAttackConfig, EvasionOutcome, LowPrototypes};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::cgan::{cgan_init, cgan_sample, cgan_train, CganConfig, CganError, CganModel, TrainingTrace};
use crate::dataset::{
    fit_normalizer, largest_remainder, stratified_fraction_indices, stratified_subset_indices, Dataset, DatasetError,
    MicrogridObservation, PriorityLabel, Provenance, FEATURE_DIM,
};
use crate::models::{
    evaluate, fit, DeployedClassifier, Hyperparameters, MetricsReport, ModelError, ModelKind,
};
use crate::seed::{derive_seed, stage_rng};

/// Share of the combined dataset held out (real rows only) to score surrogates.
pub const SURROGATE_TEST_FRACTION: f64 = 0.2;

/// Surrogate preference when (accuracy, macro F1) tie.
pub const SURROGATE_PREFERENCE: [ModelKind; 6] = [
    ModelKind::KNearestNeighbors,
    ModelKind::SupportVectorMachine,
    ModelKind::LogisticRegression,
    ModelKind::RandomForest,
    ModelKind::DecisionTree,
    ModelKind::NaiveBayes,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("collected fraction {0} is not one of 1.0, 0.8, 0.6, 0.4, 0.2")]
    InvalidFraction(f64),
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("nothing was collected")]
    EmptyCollection,
    #[error("target total {target} is smaller than the {collected} collected rows")]
    TargetBelowCollected { target: usize, collected: usize },
    #[error("{real} real rows cannot supply a {required}-row test set")]
    InsufficientRealData { real: usize, required: usize },
    #[error("no Low-priority prototypes available")]
    NoLowPrototypes,
    #[error("victim set overlaps the collected data")]
    VictimLeakage,
    #[error("cgan: {0}")]
    Cgan(#[from] CganError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseId {
    A,
    B,
    C,
    D,
    E,
}

impl CaseId {
    pub const ALL: [CaseId; 5] = [CaseId::A, CaseId::B, CaseId::C, CaseId::D, CaseId::E];

    /// Share of the edge training data the adversary collects.
    pub fn collected_fraction(self) -> f64 {
        match self {
            CaseId::A => 1.0,
            CaseId::B => 0.8,
            CaseId::C => 0.6,
            CaseId::D => 0.4,
            CaseId::E => 0.2,
        }
    }

    pub fn access(self) -> &'static str {
        match self {
            CaseId::A => "white-box",
            CaseId::E => "black-box",
            _ => "gray-box",
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for CaseId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(CaseId::A),
            "B" => Ok(CaseId::B),
            "C" => Ok(CaseId::C),
            "D" => Ok(CaseId::D),
            "E" => Ok(CaseId::E),
            _ => Err(format!("unknown case `{s}` (expected A-E)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case_id: CaseId,
    /// Ignored for case A, which never augments.
    pub use_cgan: bool,
    pub seed: u64,
}

impl CaseConfig {
    pub fn collected_fraction(&self) -> f64 {
        self.case_id.collected_fraction()
    }

    pub fn augments(&self) -> bool {
        self.use_cgan && self.case_id != CaseId::A
    }
}

/// Collected real rows plus any generated rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedDataset {
    pub dataset: Dataset,
    pub real_count: usize,
    pub generated_count: usize,
}

impl CombinedDataset {
    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Provenance flags agree with the counts.
    pub fn is_consistent(&self) -> bool {
        self.dataset.count_provenance(Provenance::Real) == self.real_count
            && self.dataset.count_provenance(Provenance::Generated) == self.generated_count
            && self.real_count + self.generated_count == self.dataset.len()
    }
}

/// Result of [`augment`]; `cgan` is `None` when augmentation was skipped
/// because nothing was missing.
#[derive(Clone, Debug)]
pub struct Augmentation {
    pub combined: CombinedDataset,
    pub cgan: Option<(CganModel, TrainingTrace)>,
}

impl Augmentation {
    pub fn skipped(&self) -> bool {
        self.cgan.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSelection {
    /// Held-out metrics for every kind, in [`SURROGATE_PREFERENCE`] order.
    pub reports: Vec<(ModelKind, MetricsReport)>,
    pub chosen: ModelKind,
    /// The chosen kind refit on the whole combined dataset.
    pub chosen_model: DeployedClassifier,
    pub train_size: usize,
    pub test_size: usize,
}

impl SurrogateSelection {
    pub fn chosen_report(&self) -> &MetricsReport {
        &self
            .reports
            .iter()
            .find(|(k, _)| *k == self.chosen)
            .expect("chosen kind was scored")
            .1
    }
}

const ALLOWED_FRACTIONS: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

/// Stratified random subset of `round(fraction * |edge_train|)` rows. A
/// fraction of 1.0 returns every row in its original order.
pub fn collect(edge_train: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, AttackError> {
    if !ALLOWED_FRACTIONS.iter().any(|f| (f - fraction).abs() < 1e-12) {
        return Err(AttackError::InvalidFraction(fraction));
    }
    let labels = edge_train.require_labels()?;
    let mut out = if fraction == 1.0 {
        edge_train.clone()
    } else {
        let idx = stratified_fraction_indices(&labels, fraction, &mut stage_rng(seed, "collect"));
        edge_train.select(&idx)
    };
    out.clear_norm_stats();
    Ok(out)
}

/// Trains a CGAN on `collected` and appends `target_total - |collected|`
/// generated rows with class shares proportional to the collected counts.
pub fn augment(collected: &Dataset, target_total: usize, config: &CganConfig) -> Result<Augmentation, AttackError> {
    if collected.is_empty() {
        return Err(AttackError::EmptyCollection);
    }
    let n = collected.len();
    if target_total < n {
        return Err(AttackError::TargetBelowCollected {
            target: target_total,
            collected: n,
        });
    }
    let real_count = collected.count_provenance(Provenance::Real);
    if target_total == n {
        return Ok(Augmentation {
            combined: CombinedDataset {
                dataset: collected.clone(),
                real_count,
                generated_count: n - real_count,
            },
            cgan: None,
        });
    }
    let mut model = cgan_init(config, FEATURE_DIM)?;
    let trace = cgan_train(&mut model, collected)?;
    let shares = largest_remainder(&collected.class_counts(), target_total - n);
    let mut rng = stage_rng(config.seed, "cgan-sample");
    let mut dataset = collected.clone();
    for (label, &count) in PriorityLabel::ALL.iter().zip(&shares) {
        if count > 0 {
            dataset.extend(&cgan_sample(&model, *label, count, &mut rng)?);
        }
    }
    Ok(Augmentation {
        combined: CombinedDataset {
            dataset,
            real_count,
            generated_count: target_total - n,
        },
        cgan: Some((model, trace)),
    })
}

/// Scores all six kinds on a stratified real-only test set of
/// `round(0.2 * |combined|)` rows after training on everything else, picks the
/// lexicographic best by (accuracy, macro F1), and refits it on the whole
/// combined dataset.
pub fn select_surrogate(
    combined: &CombinedDataset,
    hp: &Hyperparameters,
    seed: u64,
) -> Result<SurrogateSelection, AttackError> {
    let data = &combined.dataset;
    let labels = data.require_labels()?;
    let test_size = (SURROGATE_TEST_FRACTION * data.len() as f64).round() as usize;
    let real = data.indices_with_provenance(Provenance::Real);
    if real.len() < test_size {
        return Err(AttackError::InsufficientRealData {
            real: real.len(),
            required: test_size,
        });
    }
    let real_labels: Vec<PriorityLabel> = real.iter().map(|&i| labels[i]).collect();
    let picked = stratified_subset_indices(&real_labels, test_size, &mut stage_rng(seed, "surrogate-split"));
    let mut is_test = vec![false; data.len()];
    for p in picked {
        is_test[real[p]] = true;
    }
    let test: Vec<usize> = (0..data.len()).filter(|&i| is_test[i]).collect();
    let train: Vec<usize> = (0..data.len()).filter(|&i| !is_test[i]).collect();

    let raw = data.raw_features();
    let normalizer = fit_normalizer(&raw)?;
    let x_all = normalizer.standardize_matrix(&raw);
    let x_train = x_all.select(&train);
    let y_train: Vec<PriorityLabel> = train.iter().map(|&i| labels[i]).collect();
    let x_test = x_all.select(&test);
    let y_test: Vec<PriorityLabel> = test.iter().map(|&i| labels[i]).collect();

    let reports = SURROGATE_PREFERENCE
        .par_iter()
        .map(|&kind| {
            let m = fit(kind, &x_train, &y_train, hp, derive_seed(seed, kind.short_name()))?;
            Ok((kind, evaluate(&m, &x_test, &y_test)?))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    let mut best = 0;
    for (i, (_, r)) in reports.iter().enumerate().skip(1) {
        let b = &reports[best].1;
        if (r.accuracy, r.macro_f1) > (b.accuracy, b.macro_f1) {
            best = i;
        }
    }
    let chosen = reports[best].0;
    let classifier = fit(chosen, &x_all, &labels, hp, derive_seed(seed, "surrogate-refit"))?;
    Ok(SurrogateSelection {
        reports,
        chosen,
        chosen_model: DeployedClassifier {
            normalizer,
            classifier,
        },
        train_size: train.len(),
        test_size,
    })
}

/// One victim request before and after the attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackedVictim {
    pub true_label: PriorityLabel,
    pub original: MicrogridObservation,
    pub perturbed: MicrogridObservation,
    /// False for Low victims, which pass through unchanged.
    pub attacked: bool,
    pub steps: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub case: CaseConfig,
    pub victims: Vec<AttackedVictim>,
    pub selection: SurrogateSelection,
    pub combined: CombinedDataset,
    pub cgan_trace: Option<TrainingTrace>,
}

impl AttackOutcome {
    pub fn attacked(&self) -> impl Iterator<Item = &AttackedVictim> {
        self.victims.iter().filter(|v| v.attacked)
    }

    /// Share of attacked victims whose perturbation flipped the surrogate.
    pub fn surrogate_flip_rate(&self) -> f64 {
        let (n, ok) = self
            .attacked()
            .fold((0usize, 0usize), |(n, ok), v| (n + 1, ok + usize::from(v.converged)));
        if n == 0 {
            0.0
        } else {
            ok as f64 / n as f64
        }
    }
}

/// Runs collect, augmentation (when enabled), surrogate selection and evasion
/// crafting for every High and Medium victim. Deterministic in `case.seed`.
pub fn run_attack(
    edge_train: &Dataset,
    victims: &Dataset,
    case: &CaseConfig,
    attack: &EvasionAttackConfig,
    cgan: &CganConfig,
    hp: &Hyperparameters,
) -> Result<AttackOutcome, AttackError> {
    attack.validate()?;
    let victim_labels = victims.require_labels()?;
    let collected = collect(edge_train, case.collected_fraction(), derive_seed(case.seed, "collect"))?;
    let target = if case.augments() { edge_train.len() } else { collected.len() };
    let cgan_cfg = CganConfig {
        seed: derive_seed(case.seed, "cgan"),
        ..cgan.clone()
    };
    let aug = augment(&collected, target, &cgan_cfg)?;
    let selection = select_surrogate(&aug.combined, hp, derive_seed(case.seed, "surrogate"))?;
    let surrogate = &selection.chosen_model;
    let prototypes = LowPrototypes::from_dataset(&aug.combined.dataset, surrogate)?;

    let out = victims
        .observations()
        .par_iter()
        .zip(victim_labels.par_iter())
        .map(|(obs, &label)| {
            if label == PriorityLabel::Low {
                return Ok(AttackedVictim {
                    true_label: label,
                    original: *obs,
                    perturbed: *obs,
                    attacked: false,
                    steps: 0,
                    converged: true,
                });
            }
            let e = craft_evasion(obs, surrogate, &prototypes, attack)?;
            Ok(AttackedVictim {
                true_label: label,
                original: *obs,
                perturbed: e.perturbed,
                attacked: true,
                steps: e.steps,
                converged: e.converged,
            })
        })
        .collect::<Result<Vec<_>, AttackError>>()?;

    Ok(AttackOutcome {
        case: *case,
        victims: out,
        selection,
        combined: aug.combined,
        cgan_trace: aug.cgan.map(|(_, t)| t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{prepare_benchmark, generate_scenario, BenchmarkConfig, ScenarioProfile};

    fn small_benchmark() -> crate::dataset::Benchmark {
        let cfg = BenchmarkConfig {
            total_size: 300,
            victims_per_class: 10,
            ..Default::default()
        };
        let pool = generate_scenario(cfg.pool_size(), 11, &ScenarioProfile::default()).unwrap();
        prepare_benchmark(&pool, &cfg, 11).unwrap()
    }

    #[test]
    fn collect_sizes_and_balance() {
        let b = small_benchmark();
        let full = collect(&b.edge_train, 1.0, 1).unwrap();
        assert_eq!(full.observations(), b.edge_train.observations());
        assert_eq!(full.labels(), b.edge_train.labels());
        for f in [0.8, 0.6, 0.4, 0.2] {
            let c = collect(&b.edge_train, f, 1).unwrap();
            assert_eq!(c.len(), (f * 300.0f64).round() as usize);
            let counts = c.class_counts();
            let full_counts = b.edge_train.class_counts();
            for k in 0..3 {
                assert!((counts[k] as f64 - f * full_counts[k] as f64).abs() < 1.0);
            }
        }
        let a = collect(&b.edge_train, 0.4, 1).unwrap();
        let c = collect(&b.edge_train, 0.4, 2).unwrap();
        assert_eq!(a.len(), c.len());
        assert_eq!(a.class_counts(), c.class_counts());
        assert_ne!(a.observations(), c.observations());
        assert_eq!(collect(&b.edge_train, 0.5, 1).unwrap_err(), AttackError::InvalidFraction(0.5));
    }

    #[test]
    fn augment_skips_when_nothing_is_missing() {
        let b = small_benchmark();
        let aug = augment(&b.edge_train, 300, &CganConfig::default()).unwrap();
        assert!(aug.skipped());
        assert_eq!(aug.combined.generated_count, 0);
        assert_eq!(aug.combined.real_count, 300);
        assert!(matches!(
            augment(&b.edge_train, 299, &CganConfig::default()),
            Err(AttackError::TargetBelowCollected { .. })
        ));
    }

    #[test]
    fn augment_fills_to_target_with_proportional_classes() {
        let b = small_benchmark();
        let collected = collect(&b.edge_train, 0.4, 3).unwrap();
        let cfg = CganConfig {
            epochs: 2,
            ..Default::default()
        };
        let aug = augment(&collected, 300, &cfg).unwrap();
        let c = &aug.combined;
        assert_eq!((c.real_count, c.generated_count), (120, 180));
        assert!(c.is_consistent());
        let gen = c.dataset.select(&c.dataset.indices_with_provenance(Provenance::Generated));
        assert_eq!(gen.class_counts().to_vec(), largest_remainder(&collected.class_counts(), 180));
        for o in gen.observations() {
            o.validate().unwrap();
        }
    }

    #[test]
    fn surrogate_test_set_is_real_only() {
        let b = small_benchmark();
        let collected = collect(&b.edge_train, 0.2, 4).unwrap();
        let cfg = CganConfig {
            epochs: 2,
            ..Default::default()
        };
        let aug = augment(&collected, 300, &cfg).unwrap();
        let sel = select_surrogate(&aug.combined, &Hyperparameters::default(), 5).unwrap();
        // 20% of 300 is exactly the 60 real rows; training sees only generated rows.
        assert_eq!(sel.test_size, 60);
        assert_eq!(sel.train_size, 240);
        assert_eq!(sel.reports.len(), 6);
        let best = sel
            .reports
            .iter()
            .map(|(_, r)| (r.accuracy, r.macro_f1))
            .fold((f64::MIN, f64::MIN), |a, b| if b > a { b } else { a });
        let r = sel.chosen_report();
        assert_eq!((r.accuracy, r.macro_f1), best);
        // First kind in preference order attaining the best pair.
        let first = sel.reports.iter().find(|(_, r)| (r.accuracy, r.macro_f1) == best).unwrap().0;
        assert_eq!(sel.chosen, first);
    }

    #[test]
    fn insufficient_real_rows() {
        let b = small_benchmark();
        let mut d = b.edge_train.select(&(0..10).collect::<Vec<_>>());
        let gen = b.edge_train.select(&(10..100).collect::<Vec<_>>());
        for (o, l) in gen.observations().iter().zip(gen.labels()) {
            d.push(*o, *l, Provenance::Generated);
        }
        let c = CombinedDataset {
            dataset: d,
            real_count: 10,
            generated_count: 90,
        };
        assert_eq!(
            select_surrogate(&c, &Hyperparameters::default(), 0).unwrap_err(),
            AttackError::InsufficientRealData { real: 10, required: 20 }
        );
    }

    #[test]
    fn white_box_attack_preserves_truth_and_matches_edge_data() {
        let b = small_benchmark();
        let case = CaseConfig {
            case_id: CaseId::A,
            use_cgan: true,
            seed: 9,
        };
        let hp = Hyperparameters::default();
        let out = run_attack(&b.edge_train, &b.victims, &case, &EvasionAttackConfig::default(), &CganConfig::default(), &hp).unwrap();
        assert_eq!(out.combined.generated_count, 0);
        assert_eq!(out.combined.dataset.observations(), b.edge_train.observations());
        assert!(out.cgan_trace.is_none());
        let truth = b.victims.require_labels().unwrap();
        for (v, t) in out.victims.iter().zip(&truth) {
            assert_eq!(v.true_label, *t);
            assert_eq!(v.attacked, *t != PriorityLabel::Low);
            if !v.attacked {
                assert_eq!(v.perturbed, v.original);
            }
        }
        assert!(out.surrogate_flip_rate() > 0.9);
    }

    #[test]
    fn without_cgan_uses_only_collected_rows() {
        let b = small_benchmark();
        let case = CaseConfig {
            case_id: CaseId::C,
            use_cgan: false,
            seed: 2,
        };
        let out = run_attack(
            &b.edge_train,
            &b.victims,
            &case,
            &EvasionAttackConfig::default(),
            &CganConfig::default(),
            &Hyperparameters::default(),
        )
        .unwrap();
        assert_eq!((out.combined.real_count, out.combined.generated_count), (180, 0));
        assert!(out.cgan_trace.is_none());
    }

    #[test]
    fn case_ids() {
        assert_eq!("c".parse::<CaseId>(), Ok(CaseId::C));
        assert!("F".parse::<CaseId>().is_err());
        assert_eq!(CaseId::D.collected_fraction(), 0.4);
    }
}
