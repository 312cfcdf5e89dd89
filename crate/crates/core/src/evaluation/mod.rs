//! Attack scoring and the case A-E experiment grid.
//!
//! A victim counts as *detected* (true negative) when the edge classifier
//! still assigns it a non-Low priority after the attack, and as *fooled*
//! (false positive) when it is classified Low. ADR is the detected share and
//! EIR its relative drop against the same victims unperturbed.

mod report;

pub use report::{
    cell_table, manifest_json, read_report_csv, sha256_hex, surrogate_rows, tables, write_reports, ReportFiles, ReportRow,
    ReportTable, GRID_FILE, MANIFEST_FILE, NO_CGAN_FILE, SURROGATE_FILE, WITH_CGAN_FILE,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::adversary::{
    run_attack, AttackError, AttackOutcome, CaseConfig, CaseId, EvasionAttackConfig, SURROGATE_PREFERENCE,
};
use crate::cgan::CganConfig;
use crate::dataset::{Dataset, MicrogridObservation, PriorityLabel};
use crate::models::{DeployedClassifier, Hyperparameters, ModelKind};
use crate::seed::derive_indexed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no attacked victims to score")]
    EmptyVictimSet,
    #[error("original true negative rate is zero; EIR is undefined")]
    ZeroOriginalTnr,
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cell {cell}, seed {seed}: {source}")]
    Seed {
        cell: Cell,
        seed: u64,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report format: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvasionCounts {
    /// Attacked victims still classified High or Medium.
    pub tn: u64,
    /// Attacked victims classified Low.
    pub fp: u64,
}

impl EvasionCounts {
    pub fn total(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn adr(&self) -> Result<f64, EvalError> {
        if self.total() == 0 {
            return Err(EvalError::EmptyVictimSet);
        }
        Ok(self.tn as f64 / self.total() as f64)
    }
}

impl std::ops::Add for EvasionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
        }
    }
}

/// Counts detected and fooled requests among `observations` (all truly High
/// or Medium) as classified by `edge`.
pub fn score_adr<'a>(
    edge: &DeployedClassifier,
    observations: impl IntoIterator<Item = &'a MicrogridObservation>,
) -> Result<(EvasionCounts, f64), EvalError> {
    let mut c = EvasionCounts::default();
    for o in observations {
        if edge.predict_observation(o) == PriorityLabel::Low {
            c.fp += 1;
        } else {
            c.tn += 1;
        }
    }
    let adr = c.adr()?;
    Ok((c, adr))
}

/// `1 - adr / tnr_original`; negative when the attack helped detection.
pub fn score_eir(adr_adversarial: f64, tnr_original: f64) -> Result<f64, EvalError> {
    if !(tnr_original > 0.0) {
        return Err(EvalError::ZeroOriginalTnr);
    }
    Ok(1.0 - adr_adversarial / tnr_original)
}

/// One grid coordinate. Case A ignores the CGAN flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub case_id: CaseId,
    pub use_cgan: bool,
}

impl Cell {
    pub fn case_config(&self, seed: u64) -> CaseConfig {
        CaseConfig {
            case_id: self.case_id,
            use_cgan: self.use_cgan,
            seed,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.case_id == CaseId::A {
            write!(f, "A")
        } else {
            write!(f, "{}/{}", self.case_id, if self.use_cgan { "cgan" } else { "no-cgan" })
        }
    }
}

/// The nine cells: A once, B-E with and without CGAN.
pub fn default_cells() -> Vec<Cell> {
    cells_for(&CaseId::ALL)
}

pub fn cells_for(cases: &[CaseId]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &case_id in cases {
        out.push(Cell { case_id, use_cgan: true });
        if case_id != CaseId::A {
            out.push(Cell { case_id, use_cgan: false });
        }
    }
    out
}

/// Victims, edge model and training data shared by every cell.
#[derive(Clone, Debug)]
pub struct Fixtures {
    pub edge: DeployedClassifier,
    pub edge_train: Dataset,
    pub victims: Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub surrogate_kind: ModelKind,
    pub surrogate_accuracy: f64,
    pub surrogate_f1: f64,
    pub real_count: usize,
    pub generated_count: usize,
    pub counts: EvasionCounts,
    pub adr: f64,
    pub tnr_original: f64,
    pub eir: f64,
    /// Attacked victims the surrogate itself classified Low after crafting.
    pub surrogate_flip_rate: f64,
    pub mean_steps: f64,
}

/// Scores one attack outcome against the edge classifier.
pub fn score_outcome(edge: &DeployedClassifier, outcome: &AttackOutcome) -> Result<SeedResult, EvalError> {
    let attacked: Vec<_> = outcome.attacked().collect();
    let (_, tnr_original) = score_adr(edge, attacked.iter().map(|v| &v.original))?;
    let (counts, adr) = score_adr(edge, attacked.iter().map(|v| &v.perturbed))?;
    let eir = score_eir(adr, tnr_original)?;
    let report = outcome.selection.chosen_report();
    let mean_steps = attacked.iter().map(|v| v.steps as f64).sum::<f64>() / attacked.len() as f64;
    Ok(SeedResult {
        seed: outcome.case.seed,
        surrogate_kind: outcome.selection.chosen,
        surrogate_accuracy: report.accuracy,
        surrogate_f1: report.macro_f1,
        real_count: outcome.combined.real_count,
        generated_count: outcome.combined.generated_count,
        counts,
        adr,
        tnr_original,
        eir,
        surrogate_flip_rate: outcome.surrogate_flip_rate(),
        mean_steps,
    })
}

/// Mean and population standard deviation, summed in index order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stddev: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, stddev: var.sqrt() }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvasionReport {
    pub cell: Cell,
    /// Most frequently chosen surrogate across seeds; ties follow the
    /// surrogate preference order.
    pub surrogate_kind: ModelKind,
    pub adr: f64,
    pub adr_stddev: f64,
    pub eir: f64,
    pub eir_stddev: f64,
    pub tnr_original: f64,
    pub surrogate_accuracy: Summary,
    pub surrogate_f1: Summary,
    /// Summed over seeds.
    pub counts: EvasionCounts,
    pub seeds_aggregated: usize,
    pub per_seed: Vec<SeedResult>,
}

impl EvasionReport {
    pub fn aggregate(cell: Cell, per_seed: Vec<SeedResult>) -> Result<Self, EvalError> {
        if per_seed.is_empty() {
            return Err(EvalError::NoSeeds);
        }
        let col = |f: fn(&SeedResult) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
        let adr = Summary::of(&col(|s| s.adr));
        let eir = Summary::of(&col(|s| s.eir));
        let mut votes = [0usize; 6];
        for s in &per_seed {
            votes[SURROGATE_PREFERENCE.iter().position(|&k| k == s.surrogate_kind).expect("known kind")] += 1;
        }
        let best = votes.iter().enumerate().max_by_key(|&(i, &n)| (n, std::cmp::Reverse(i))).unwrap().0;
        Ok(Self {
            cell,
            surrogate_kind: SURROGATE_PREFERENCE[best],
            adr: adr.mean,
            adr_stddev: adr.stddev,
            eir: eir.mean,
            eir_stddev: eir.stddev,
            tnr_original: Summary::of(&col(|s| s.tnr_original)).mean,
            surrogate_accuracy: Summary::of(&col(|s| s.surrogate_accuracy)),
            surrogate_f1: Summary::of(&col(|s| s.surrogate_f1)),
            counts: per_seed.iter().fold(EvasionCounts::default(), |a, s| a + s.counts),
            seeds_aggregated: per_seed.len(),
            per_seed,
        })
    }

    pub fn median_surrogate_accuracy(&self) -> f64 {
        median(&self.per_seed.iter().map(|s| s.surrogate_accuracy).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub n_seeds: usize,
    pub cases: Vec<CaseId>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_seeds: 10,
            cases: CaseId::ALL.to_vec(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_seeds == 0 {
            return Err(EvalError::NoSeeds);
        }
        if self.cases.is_empty() {
            return Err(EvalError::InvalidGrid("no cases selected".into()));
        }
        let mut seen = self.cases.clone();
        seen.sort_by_key(|c| *c as u8);
        seen.dedup();
        if seen.len() != self.cases.len() {
            return Err(EvalError::InvalidGrid("duplicate case".into()));
        }
        Ok(())
    }

    /// Per-run seeds shared by every cell.
    pub fn seeds(&self, master_seed: u64) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| derive_indexed(master_seed, "run", i)).collect()
    }
}

/// Everything a cell needs besides its coordinates and seeds.
#[derive(Clone, Debug, Default)]
pub struct AttackSettings {
    pub attack: EvasionAttackConfig,
    pub cgan: CganConfig,
    pub hyperparameters: Hyperparameters,
}

fn run_seed(cell: Cell, seed: u64, fx: &Fixtures, s: &AttackSettings) -> Result<SeedResult, EvalError> {
    let outcome = run_attack(
        &fx.edge_train,
        &fx.victims,
        &cell.case_config(seed),
        &s.attack,
        &s.cgan,
        &s.hyperparameters,
    )
    .map_err(|e| EvalError::Seed {
        cell,
        seed,
        source: Box::new(e.into()),
    })?;
    let r = score_outcome(&fx.edge, &outcome).map_err(|e| EvalError::Seed {
        cell,
        seed,
        source: Box::new(e),
    })?;
    log::info!("cell {cell} seed {seed:#x}: {} adr {:.4} eir {:.4}", r.surrogate_kind, r.adr, r.eir);
    Ok(r)
}

/// Runs one cell over `seeds` and aggregates the per-seed scores.
pub fn run_cell(cell: Cell, seeds: &[u64], fx: &Fixtures, s: &AttackSettings) -> Result<EvasionReport, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    let per_seed = seeds
        .par_iter()
        .map(|&seed| run_seed(cell, seed, fx, s))
        .collect::<Result<Vec<_>, _>>()?;
    EvasionReport::aggregate(cell, per_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub reports: Vec<EvasionReport>,
}

impl ExperimentGrid {
    pub fn report(&self, case_id: CaseId, use_cgan: bool) -> Option<&EvasionReport> {
        let use_cgan = use_cgan || case_id == CaseId::A;
        self.reports
            .iter()
            .find(|r| r.cell.case_id == case_id && r.cell.use_cgan == use_cgan)
    }
}

/// Runs every cell of `grid` over the shared seed list. Cell and seed jobs
/// run in parallel; results are assembled in cell order.
pub fn run_experiment(
    grid: &GridConfig,
    master_seed: u64,
    fx: &Fixtures,
    s: &AttackSettings,
) -> Result<ExperimentGrid, EvalError> {
    grid.validate()?;
    let seeds = grid.seeds(master_seed);
    let cells = cells_for(&grid.cases);
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&sd| (c, sd)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, seed)| run_seed(cells[c], seed, fx, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reports = Vec::with_capacity(cells.len());
    for (c, chunk) in results.chunks(seeds.len()).enumerate() {
        reports.push(EvasionReport::aggregate(cells[c], chunk.to_vec())?);
    }
    Ok(ExperimentGrid {
        master_seed,
        seeds,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureMatrix, NormStats, FEATURE_DIM};
    use crate::models::fit;
    use approx::assert_abs_diff_eq;
    use PriorityLabel::*;

    fn obs(c: f64) -> MicrogridObservation {
        MicrogridObservation {
            consumption_kw: c,
            pv_generation_kw: 0.0,
            wind_generation_kw: 0.0,
            battery_capacity_kwh: 1.0,
            battery_soc_frac: 0.5,
            hour_of_day: 0,
        }
    }

    /// 1-NN on consumption: Low below 1, High above.
    fn edge() -> DeployedClassifier {
        let x = FeatureMatrix::from_rows(&[obs(0.0).features(), obs(2.0).features()]);
        let mut hp = Hyperparameters::default();
        hp.knn.k = 1;
        DeployedClassifier {
            normalizer: NormStats {
                mean: vec![0.0; FEATURE_DIM],
                std: vec![1.0; FEATURE_DIM],
            },
            classifier: fit(crate::models::ModelKind::KNearestNeighbors, &x, &[Low, High], &hp, 0).unwrap(),
        }
    }

    #[test]
    fn adr_extremes_and_fixture() {
        let e = edge();
        let all_low = vec![obs(0.1); 5];
        assert_eq!(score_adr(&e, &all_low).unwrap(), (EvasionCounts { tn: 0, fp: 5 }, 0.0));
        let none_low = vec![obs(1.9); 5];
        assert_eq!(score_adr(&e, &none_low).unwrap().1, 1.0);
        // 26 detected, 174 fooled.
        let mixed: Vec<_> = (0..200).map(|i| obs(if i % 200 < 26 { 1.8 } else { 0.2 })).collect();
        let (c, adr) = score_adr(&e, &mixed).unwrap();
        assert_eq!(c, EvasionCounts { tn: 26, fp: 174 });
        assert_eq!(adr, 0.13);
        assert!(matches!(score_adr(&e, &[]), Err(EvalError::EmptyVictimSet)));
    }

    #[test]
    fn eir_identities() {
        assert_eq!(score_eir(0.8, 0.8).unwrap(), 0.0);
        assert_eq!(score_eir(0.0, 0.97).unwrap(), 1.0);
        assert_abs_diff_eq!(score_eir(0.034, 0.97).unwrap(), 0.964_948_453_608_247_4, epsilon = 1e-12);
        assert!(score_eir(1.0, 0.9).unwrap() < 0.0);
        assert!(matches!(score_eir(0.1, 0.0), Err(EvalError::ZeroOriginalTnr)));
    }

    fn seed_result(seed: u64, adr: f64, eir: f64, kind: ModelKind) -> SeedResult {
        SeedResult {
            seed,
            surrogate_kind: kind,
            surrogate_accuracy: 0.9,
            surrogate_f1: 0.9,
            real_count: 10,
            generated_count: 0,
            counts: EvasionCounts { tn: 1, fp: 1 },
            adr,
            tnr_original: 1.0,
            eir,
            surrogate_flip_rate: 1.0,
            mean_steps: 3.0,
        }
    }

    #[test]
    fn aggregation_matches_scalar_resummation() {
        let vals = [0.1, 0.25, 0.7, 0.05];
        let per: Vec<_> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| seed_result(i as u64, v, 1.0 - v, ModelKind::SupportVectorMachine))
            .collect();
        let cell = Cell {
            case_id: CaseId::C,
            use_cgan: true,
        };
        let r = EvasionReport::aggregate(cell, per).unwrap();
        let mut s = 0.0;
        for v in vals {
            s += v;
        }
        assert_eq!(r.adr, s / 4.0);
        let var = vals.iter().map(|v| (v - s / 4.0).powi(2)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(r.adr_stddev, var.sqrt(), epsilon = 1e-15);
        assert_eq!(r.counts, EvasionCounts { tn: 4, fp: 4 });
        assert_eq!(r.seeds_aggregated, 4);
        assert_eq!(r.surrogate_kind, ModelKind::SupportVectorMachine);
    }

    #[test]
    fn single_seed_has_zero_spread() {
        let cell = Cell {
            case_id: CaseId::B,
            use_cgan: false,
        };
        let r = EvasionReport::aggregate(cell, vec![seed_result(1, 0.3, 0.6, ModelKind::NaiveBayes)]).unwrap();
        assert_eq!(r.adr_stddev, 0.0);
        assert_eq!(r.eir_stddev, 0.0);
        assert!(matches!(EvasionReport::aggregate(cell, vec![]), Err(EvalError::NoSeeds)));
    }

    #[test]
    fn surrogate_vote_ties_follow_preference() {
        let cell = Cell {
            case_id: CaseId::B,
            use_cgan: true,
        };
        let per = vec![
            seed_result(1, 0.1, 0.9, ModelKind::RandomForest),
            seed_result(2, 0.1, 0.9, ModelKind::LogisticRegression),
        ];
        assert_eq!(EvasionReport::aggregate(cell, per).unwrap().surrogate_kind, ModelKind::LogisticRegression);
    }

    #[test]
    fn grid_shape() {
        let cells = default_cells();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells.iter().filter(|c| c.case_id == CaseId::A).count(), 1);
        assert_eq!(cells.iter().filter(|c| !c.use_cgan).count(), 4);
        let g = GridConfig::default();
        let seeds = g.seeds(5);
        assert_eq!(seeds.len(), 10);
        assert_eq!(seeds, g.seeds(5));
        let mut u = seeds.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 10);
        assert!(matches!(GridConfig { n_seeds: 0, ..g.clone() }.validate(), Err(EvalError::NoSeeds)));
        assert!(GridConfig {
            cases: vec![CaseId::A, CaseId::A],
            ..g
        }
        .validate()
        .is_err());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
