//! Config-driven entry points behind the `v2m-aml` subcommands.
//!
//! Every command validates the whole configuration and reads all of its
//! inputs before the first file is written. Outputs land under
//! `output_dir`, one subdirectory per stage, each with a `manifest.json`
//! naming the configuration, seeds and input/output hashes.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adversary::{run_attack, AttackOutcome, CaseId};
use crate::config::{DatasetSource, RunConfig};
use crate::dataset::{
    generate_scenario, load_csv, prepare_benchmark, read_labeled_csv, stratified_fraction_indices,
    write_labeled_csv, Benchmark, Dataset, NormStats,
};
use crate::evaluation::{
    cell_table, run_experiment, score_outcome, sha256_hex, tables, write_reports, AttackSettings, Cell,
    EvasionReport, ExperimentGrid, Fixtures, ReportFiles,
};
use crate::models::{evaluate, DeployedClassifier, MetricsReport, ModelKind};
use crate::seed::{derive_seed, stage_rng};
use crate::{Error, Result};

pub const DATA_DIR: &str = "data";
pub const EDGE_DIR: &str = "edge";
pub const ATTACK_DIR: &str = "attack";
pub const EXPERIMENT_DIR: &str = "experiment";

pub const EDGE_TRAIN_CSV: &str = "edge_train.csv";
pub const VICTIMS_CSV: &str = "victims.csv";
pub const NORMALIZER_JSON: &str = "normalizer.json";
pub const KMEANS_JSON: &str = "kmeans.json";
pub const EDGE_MODEL_JSON: &str = "edge_model.json";
pub const EDGE_METRICS_CSV: &str = "metrics.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Models compared against the K-NN edge classifier on the holdout.
pub const EDGE_COMPARISON: [ModelKind; 3] = [
    ModelKind::KNearestNeighbors,
    ModelKind::SupportVectorMachine,
    ModelKind::LogisticRegression,
];

/// Share of the edge training set used to fit the comparison models.
const EDGE_HOLDOUT_TRAIN_FRACTION: f64 = 0.8;

fn serde_err(e: impl std::fmt::Display) -> Error {
    Error::Serde(e.to_string())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Hashes of files written so far, keyed by name relative to their stage directory.
#[derive(Default)]
struct Written(BTreeMap<String, String>);

impl Written {
    fn bytes(&mut self, dir: &Path, name: &str, content: &[u8]) -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        self.0.insert(name.to_string(), sha256_hex(content));
        Ok(path)
    }

    /// Records a file produced by another writer.
    fn existing(&mut self, dir: &Path, name: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        self.0.insert(name.to_string(), sha256_hex(&read_file(&path)?));
        Ok(path)
    }
}

#[derive(Serialize)]
struct Manifest<'a, E: Serialize> {
    format: &'static str,
    version: u32,
    command: &'static str,
    master_seed: u64,
    config: serde_json::Value,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
    details: E,
}

fn write_manifest<E: Serialize>(
    dir: &Path,
    command: &'static str,
    cfg: &RunConfig,
    inputs: &BTreeMap<String, String>,
    outputs: &Written,
    details: E,
) -> Result<PathBuf> {
    let m = Manifest {
        format: "v2m-aml/stage-manifest",
        version: 1,
        command,
        master_seed: cfg.master_seed,
        config: cfg.to_json_value(),
        inputs,
        outputs: &outputs.0,
        details,
    };
    let text = serde_json::to_string_pretty(&m).map_err(serde_err)?;
    let path = dir.join(MANIFEST_JSON);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn stage_dir(cfg: &RunConfig, stage: &str) -> PathBuf {
    cfg.output_dir.join(stage)
}

/// Raw observation pool from the configured source, plus the hash of any input file.
fn load_pool(cfg: &RunConfig) -> Result<(Dataset, BTreeMap<String, String>)> {
    let mut inputs = BTreeMap::new();
    let pool = match &cfg.dataset {
        DatasetSource::Synthetic { profile } => generate_scenario(
            cfg.benchmark.pool_size(),
            derive_seed(cfg.master_seed, "scenario"),
            profile,
        )?,
        DatasetSource::Csv { path, columns } => {
            let d = load_csv(path, columns)?;
            inputs.insert(path.display().to_string(), sha256_hex(&read_file(path)?));
            d
        }
    };
    Ok((pool, inputs))
}

/// Labelled edge training set and victim holdout for `cfg`.
pub fn build_benchmark(cfg: &RunConfig) -> Result<(Benchmark, BTreeMap<String, String>)> {
    cfg.validate()?;
    let (pool, inputs) = load_pool(cfg)?;
    let b = prepare_benchmark(&pool, &cfg.benchmark, derive_seed(cfg.master_seed, "benchmark"))?;
    Ok((b, inputs))
}

#[derive(Clone, Debug)]
pub struct GenDataSummary {
    pub dir: PathBuf,
    pub edge_train_rows: usize,
    pub victim_rows: usize,
    pub class_counts: [usize; 3],
}

fn write_data(cfg: &RunConfig, b: &Benchmark, inputs: &BTreeMap<String, String>) -> Result<GenDataSummary> {
    let dir = stage_dir(cfg, DATA_DIR);
    create_dir(&dir)?;
    let mut w = Written::default();
    write_labeled_csv(&b.edge_train, dir.join(EDGE_TRAIN_CSV))?;
    w.existing(&dir, EDGE_TRAIN_CSV)?;
    write_labeled_csv(&b.victims, dir.join(VICTIMS_CSV))?;
    w.existing(&dir, VICTIMS_CSV)?;
    let stats = b.edge_train.norm_stats().expect("benchmark output is standardized");
    w.bytes(&dir, NORMALIZER_JSON, serde_json::to_string_pretty(stats).map_err(serde_err)?.as_bytes())?;
    w.bytes(&dir, KMEANS_JSON, serde_json::to_string_pretty(&b.kmeans).map_err(serde_err)?.as_bytes())?;
    write_manifest(
        &dir,
        "gen-data",
        cfg,
        inputs,
        &w,
        serde_json::json!({
            "scenario_seed": derive_seed(cfg.master_seed, "scenario"),
            "benchmark_seed": derive_seed(cfg.master_seed, "benchmark"),
            "edge_train_class_counts": b.edge_train.class_counts(),
            "victim_class_counts": b.victims.class_counts(),
        }),
    )?;
    Ok(GenDataSummary {
        dir,
        edge_train_rows: b.edge_train.len(),
        victim_rows: b.victims.len(),
        class_counts: b.edge_train.class_counts(),
    })
}

/// Generates (or loads) the pool, labels it and writes the edge training set,
/// victim holdout, normalizer and K-means model.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GenDataSummary> {
    let (b, inputs) = build_benchmark(cfg)?;
    write_data(cfg, &b, &inputs)
}

/// Edge training set and victims as written by `gen-data`, with the hashes
/// of the files they came from.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset, BTreeMap<String, String>)> {
    let dir = stage_dir(cfg, DATA_DIR);
    let mut inputs = BTreeMap::new();
    let mut hashed = |name: &str| -> Result<Vec<u8>> {
        let path = dir.join(name);
        let bytes = read_file(&path)?;
        inputs.insert(format!("{DATA_DIR}/{name}"), sha256_hex(&bytes));
        Ok(bytes)
    };
    let stats: NormStats = serde_json::from_slice(&hashed(NORMALIZER_JSON)?).map_err(serde_err)?;
    hashed(EDGE_TRAIN_CSV)?;
    hashed(VICTIMS_CSV)?;
    let edge_train = read_labeled_csv(dir.join(EDGE_TRAIN_CSV))?.with_norm_stats(stats.clone());
    let victims = read_labeled_csv(dir.join(VICTIMS_CSV))?.with_norm_stats(stats);
    edge_train.require_labels()?;
    victims.require_labels()?;
    Ok((edge_train, victims, inputs))
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeComparison {
    pub model: ModelKind,
    pub report: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct EdgeTraining {
    /// K-NN fitted on the whole edge training set.
    pub edge: DeployedClassifier,
    /// Holdout metrics of K-NN, SVM and LR fitted on the training part.
    pub comparison: Vec<EdgeComparison>,
    pub holdout_train: usize,
    pub holdout_test: usize,
}

impl EdgeTraining {
    /// Whether K-NN matched or beat every compared model on holdout accuracy.
    pub fn knn_is_best(&self) -> bool {
        let acc = |k| self.comparison.iter().find(|c| c.model == k).map(|c| c.report.accuracy);
        let knn = acc(ModelKind::KNearestNeighbors).unwrap_or(f64::NAN);
        self.comparison.iter().all(|c| c.report.accuracy <= knn)
    }
}

pub fn train_edge(cfg: &RunConfig, edge_train: &Dataset) -> Result<EdgeTraining> {
    let labels = edge_train.require_labels()?;
    let mut rng = stage_rng(cfg.master_seed, "edge-holdout");
    let train_idx = stratified_fraction_indices(&labels, EDGE_HOLDOUT_TRAIN_FRACTION, &mut rng);
    let mut in_train = vec![false; labels.len()];
    train_idx.iter().for_each(|&i| in_train[i] = true);
    let test_idx: Vec<usize> = (0..labels.len()).filter(|&i| !in_train[i]).collect();
    let train = edge_train.select(&train_idx);
    let test = edge_train.select(&test_idx);
    let test_x = test.standardized()?;
    let test_y = test.require_labels()?;
    let seed = derive_seed(cfg.master_seed, "edge");
    let mut comparison = Vec::new();
    for kind in EDGE_COMPARISON {
        let m = DeployedClassifier::train(kind, &train, &cfg.models, derive_seed(seed, kind.short_name()))?;
        comparison.push(EdgeComparison {
            model: kind,
            report: evaluate(&m.classifier, &test_x, &test_y)?,
        });
    }
    let edge = DeployedClassifier::train(ModelKind::KNearestNeighbors, edge_train, &cfg.models, seed)?;
    Ok(EdgeTraining {
        edge,
        comparison,
        holdout_train: train.len(),
        holdout_test: test.len(),
    })
}

fn edge_metrics_csv(t: &EdgeTraining) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "accuracy", "macro_f1", "train_size", "test_size"])
        .map_err(serde_err)?;
    for c in &t.comparison {
        w.write_record([
            c.model.short_name().to_string(),
            c.report.accuracy.to_string(),
            c.report.macro_f1.to_string(),
            t.holdout_train.to_string(),
            t.holdout_test.to_string(),
        ])
        .map_err(serde_err)?;
    }
    String::from_utf8(w.into_inner().map_err(serde_err)?).map_err(serde_err)
}

fn write_edge(cfg: &RunConfig, t: &EdgeTraining, inputs: &BTreeMap<String, String>) -> Result<PathBuf> {
    let dir = stage_dir(cfg, EDGE_DIR);
    create_dir(&dir)?;
    let mut w = Written::default();
    w.bytes(&dir, EDGE_MODEL_JSON, t.edge.to_json()?.as_bytes())?;
    w.bytes(&dir, EDGE_METRICS_CSV, edge_metrics_csv(t)?.as_bytes())?;
    write_manifest(
        &dir,
        "train-edge",
        cfg,
        inputs,
        &w,
        serde_json::json!({
            "edge_seed": derive_seed(cfg.master_seed, "edge"),
            "knn_is_best": t.knn_is_best(),
            "comparison": t.comparison,
        }),
    )?;
    Ok(dir)
}

/// Trains the K-NN edge classifier on `data/edge_train.csv` and reports its
/// holdout accuracy next to SVM and LR.
pub fn cmd_train_edge(cfg: &RunConfig) -> Result<EdgeTraining> {
    cfg.validate()?;
    let (edge_train, _, inputs) = load_data(cfg)?;
    let t = train_edge(cfg, &edge_train)?;
    write_edge(cfg, &t, &inputs)?;
    Ok(t)
}

fn load_edge(cfg: &RunConfig, inputs: &mut BTreeMap<String, String>) -> Result<DeployedClassifier> {
    let path = stage_dir(cfg, EDGE_DIR).join(EDGE_MODEL_JSON);
    let bytes = read_file(&path)?;
    inputs.insert(format!("{EDGE_DIR}/{EDGE_MODEL_JSON}"), sha256_hex(&bytes));
    let text = String::from_utf8(bytes).map_err(serde_err)?;
    Ok(DeployedClassifier::from_json(&text)?)
}

fn attack_settings(cfg: &RunConfig) -> AttackSettings {
    AttackSettings {
        attack: cfg.attack.clone(),
        cgan: cfg.cgan.clone(),
        hyperparameters: cfg.models.clone(),
    }
}

fn cell_dir_name(cell: Cell) -> String {
    if cell.case_id == CaseId::A {
        "A".into()
    } else {
        format!("{}-{}", cell.case_id, if cell.use_cgan { "cgan" } else { "no-cgan" })
    }
}

fn victims_csv(outcome: &AttackOutcome, edge: &DeployedClassifier) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "true_label".to_string(),
        "attacked".into(),
        "steps".into(),
        "converged".into(),
        "edge_before".into(),
        "edge_after".into(),
    ];
    for prefix in ["original", "perturbed"] {
        header.extend(crate::dataset::FEATURE_NAMES.iter().map(|f| format!("{prefix}_{f}")));
    }
    w.write_record(&header).map_err(serde_err)?;
    for v in &outcome.victims {
        let mut rec = vec![
            v.true_label.as_str().to_string(),
            v.attacked.to_string(),
            v.steps.to_string(),
            v.converged.to_string(),
            edge.predict_observation(&v.original).as_str().to_string(),
            edge.predict_observation(&v.perturbed).as_str().to_string(),
        ];
        for o in [&v.original, &v.perturbed] {
            rec.extend(o.features().iter().map(f64::to_string));
        }
        w.write_record(&rec).map_err(serde_err)?;
    }
    String::from_utf8(w.into_inner().map_err(serde_err)?).map_err(serde_err)
}

fn selection_csv(outcome: &AttackOutcome) -> Result<String> {
    let sel = &outcome.selection;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "accuracy", "macro_f1", "chosen", "train_size", "test_size"])
        .map_err(serde_err)?;
    for (kind, r) in &sel.reports {
        w.write_record([
            kind.short_name().to_string(),
            r.accuracy.to_string(),
            r.macro_f1.to_string(),
            (*kind == sel.chosen).to_string(),
            sel.train_size.to_string(),
            sel.test_size.to_string(),
        ])
        .map_err(serde_err)?;
    }
    String::from_utf8(w.into_inner().map_err(serde_err)?).map_err(serde_err)
}

#[derive(Clone, Debug)]
pub struct AttackSummary {
    pub dir: PathBuf,
    pub report: EvasionReport,
    pub real_count: usize,
    pub generated_count: usize,
    pub text: String,
}

/// Runs one case against the stored edge model and victims, using the first
/// seed of the grid seed list.
pub fn cmd_attack(cfg: &RunConfig, case_id: CaseId, use_cgan: bool) -> Result<AttackSummary> {
    cfg.validate()?;
    let (edge_train, victims, mut inputs) = load_data(cfg)?;
    let edge = load_edge(cfg, &mut inputs)?;
    let cell = Cell { case_id, use_cgan };
    let seed = cfg.grid.seeds(cfg.master_seed)[0];
    let s = attack_settings(cfg);
    let outcome = run_attack(
        &edge_train,
        &victims,
        &cell.case_config(seed),
        &s.attack,
        &s.cgan,
        &s.hyperparameters,
    )?;
    let result = score_outcome(&edge, &outcome)?;
    let report = EvasionReport::aggregate(cell, vec![result])?;
    let table = cell_table(&report);

    let dir = stage_dir(cfg, ATTACK_DIR).join(cell_dir_name(cell));
    create_dir(&dir)?;
    let mut w = Written::default();
    w.bytes(&dir, "report.csv", table.to_csv()?.as_bytes())?;
    w.bytes(&dir, "report.txt", table.to_text().as_bytes())?;
    w.bytes(&dir, "victims.csv", victims_csv(&outcome, &edge)?.as_bytes())?;
    w.bytes(&dir, "surrogate_selection.csv", selection_csv(&outcome)?.as_bytes())?;
    w.bytes(&dir, "surrogate_model.json", outcome.selection.chosen_model.to_json()?.as_bytes())?;
    write_labeled_csv(&outcome.combined.dataset, dir.join("combined.csv"))?;
    w.existing(&dir, "combined.csv")?;
    if let Some(trace) = &outcome.cgan_trace {
        trace.write_csv(dir.join("cgan_trace.csv"))?;
        w.existing(&dir, "cgan_trace.csv")?;
    }
    write_manifest(
        &dir,
        "attack",
        cfg,
        &inputs,
        &w,
        serde_json::json!({
            "case": case_id.to_string(),
            "use_cgan": outcome.case.augments(),
            "seed": seed,
            "real_count": outcome.combined.real_count,
            "generated_count": outcome.combined.generated_count,
            "surrogate": outcome.selection.chosen.short_name(),
        }),
    )?;
    Ok(AttackSummary {
        dir,
        real_count: outcome.combined.real_count,
        generated_count: outcome.combined.generated_count,
        text: table.to_text(),
        report,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub grid: ExperimentGrid,
    pub files: ReportFiles,
    /// The three tables as aligned text.
    pub text: String,
}

/// Regenerates the benchmark and edge model, then runs the full grid and
/// writes the surrogate, with-CGAN and without-CGAN tables.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<ExperimentSummary> {
    let (b, pool_inputs) = build_benchmark(cfg)?;
    let edge = train_edge(cfg, &b.edge_train)?;
    write_data(cfg, &b, &pool_inputs)?;
    let (edge_train, victims, mut inputs) = load_data(cfg)?;
    write_edge(cfg, &edge, &inputs)?;
    load_edge(cfg, &mut inputs)?;
    inputs.extend(pool_inputs);

    let fx = Fixtures {
        edge: edge.edge,
        edge_train,
        victims,
    };
    let grid = run_experiment(&cfg.grid, cfg.master_seed, &fx, &attack_settings(cfg))?;
    let files = write_reports(&grid, stage_dir(cfg, EXPERIMENT_DIR), &cfg.to_json_value(), &inputs)?;
    let text = tables(&grid)
        .iter()
        .map(|(_, t)| t.to_text())
        .collect::<Vec<_>>()
        .join("\n");
    Ok(ExperimentSummary { grid, files, text })
}

pub fn default_config_toml() -> Result<String> {
    Ok(RunConfig::default().to_toml()?)
}
