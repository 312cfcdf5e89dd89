use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EvalError, EvasionReport, ExperimentGrid};
use crate::adversary::CaseId;

pub const SURROGATE_FILE: &str = "surrogate_table";
pub const WITH_CGAN_FILE: &str = "with_cgan_table";
pub const NO_CGAN_FILE: &str = "without_cgan_table";
pub const GRID_FILE: &str = "grid.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case: String,
    pub surrogate: String,
    pub metric: String,
    pub mean: f64,
    pub stddev: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub title: String,
    pub rows: Vec<ReportRow>,
}

fn row(r: &EvasionReport, metric: &str, mean: f64, stddev: f64) -> ReportRow {
    ReportRow {
        case: r.cell.case_id.to_string(),
        surrogate: r.surrogate_kind.short_name().to_string(),
        metric: metric.into(),
        mean,
        stddev,
        n_seeds: r.seeds_aggregated,
    }
}

fn cells_in_case_order(grid: &ExperimentGrid, use_cgan: bool) -> Vec<&EvasionReport> {
    CaseId::ALL.iter().filter_map(|&c| grid.report(c, use_cgan)).collect()
}

/// Accuracy and macro F1 of the chosen surrogates, from the CGAN cells.
pub fn surrogate_rows(grid: &ExperimentGrid) -> Vec<ReportRow> {
    cells_in_case_order(grid, true)
        .into_iter()
        .flat_map(|r| {
            [
                row(r, "accuracy", r.surrogate_accuracy.mean, r.surrogate_accuracy.stddev),
                row(r, "f1", r.surrogate_f1.mean, r.surrogate_f1.stddev),
            ]
        })
        .collect()
}

/// ADR, EIR and the unperturbed TNR. Case A is shared by both tables.
fn evasion_rows(grid: &ExperimentGrid, use_cgan: bool) -> Vec<ReportRow> {
    cells_in_case_order(grid, use_cgan)
        .into_iter()
        .flat_map(|r| {
            [
                row(r, "adr", r.adr, r.adr_stddev),
                row(r, "eir", r.eir, r.eir_stddev),
                row(r, "tnr_original", r.tnr_original, 0.0),
            ]
        })
        .collect()
}

/// All metrics of a single cell, for one-off attack runs.
pub fn cell_table(r: &EvasionReport) -> ReportTable {
    ReportTable {
        title: format!("Attack report, case {}", r.cell),
        rows: vec![
            row(r, "accuracy", r.surrogate_accuracy.mean, r.surrogate_accuracy.stddev),
            row(r, "f1", r.surrogate_f1.mean, r.surrogate_f1.stddev),
            row(r, "adr", r.adr, r.adr_stddev),
            row(r, "eir", r.eir, r.eir_stddev),
            row(r, "tnr_original", r.tnr_original, 0.0),
        ],
    }
}

pub fn tables(grid: &ExperimentGrid) -> [(&'static str, ReportTable); 3] {
    [
        (
            SURROGATE_FILE,
            ReportTable {
                title: "Surrogate accuracy and F1 (with CGAN)".into(),
                rows: surrogate_rows(grid),
            },
        ),
        (
            WITH_CGAN_FILE,
            ReportTable {
                title: "ADR and EIR with CGAN".into(),
                rows: evasion_rows(grid, true),
            },
        ),
        (
            NO_CGAN_FILE,
            ReportTable {
                title: "ADR and EIR without CGAN".into(),
                rows: evasion_rows(grid, false),
            },
        ),
    ]
}

impl ReportTable {
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| EvalError::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| EvalError::Format(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.title);
        let _ = writeln!(
            s,
            "{:<5} {:<9} {:<13} {:>9} {:>9} {:>7}",
            "case", "surrogate", "metric", "mean", "stddev", "n_seeds"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<5} {:<9} {:<13} {:>9.4} {:>9.4} {:>7}",
                r.case, r.surrogate, r.metric, r.mean, r.stddev, r.n_seeds
            );
        }
        s
    }
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>, EvalError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| EvalError::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<ReportRow>, _>>()
        .map_err(|e| EvalError::Format(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(dir: &Path, name: &str, content: &str, hashes: &mut BTreeMap<String, String>) -> Result<PathBuf, EvalError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    hashes.insert(name.to_string(), sha256_hex(content.as_bytes()));
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub csv: Vec<PathBuf>,
    pub text: Vec<PathBuf>,
    pub grid: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct CellEntry {
    cell: String,
    case: String,
    use_cgan: bool,
    real_count: Vec<usize>,
    generated_count: Vec<usize>,
}

/// Manifest naming the configuration, every seed, per-cell provenance
/// counts and the hash of every input and output file.
pub fn manifest_json(
    grid: &ExperimentGrid,
    config: &serde_json::Value,
    inputs: &BTreeMap<String, String>,
    outputs: &BTreeMap<String, String>,
) -> Result<String, EvalError> {
    let cells: Vec<CellEntry> = grid
        .reports
        .iter()
        .map(|r| CellEntry {
            cell: r.cell.to_string(),
            case: r.cell.case_id.to_string(),
            use_cgan: r.cell.use_cgan && r.cell.case_id != CaseId::A,
            real_count: r.per_seed.iter().map(|s| s.real_count).collect(),
            generated_count: r.per_seed.iter().map(|s| s.generated_count).collect(),
        })
        .collect();
    let m = serde_json::json!({
        "format": "v2m-aml/run-manifest",
        "version": 1,
        "master_seed": grid.master_seed,
        "seeds": grid.seeds,
        "config": config,
        "cells": cells,
        "inputs": inputs,
        "outputs": outputs,
    });
    serde_json::to_string_pretty(&m).map_err(|e| EvalError::Format(e.to_string()))
}

/// Writes the three tables (CSV and text), the per-seed grid and the manifest.
pub fn write_reports(
    grid: &ExperimentGrid,
    dir: impl AsRef<Path>,
    config: &serde_json::Value,
    inputs: &BTreeMap<String, String>,
) -> Result<ReportFiles, EvalError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut hashes = BTreeMap::new();
    let mut csv = Vec::new();
    let mut text = Vec::new();
    for (name, table) in tables(grid) {
        csv.push(write(dir, &format!("{name}.csv"), &table.to_csv()?, &mut hashes)?);
        text.push(write(dir, &format!("{name}.txt"), &table.to_text(), &mut hashes)?);
    }
    let grid_json = serde_json::to_string_pretty(grid).map_err(|e| EvalError::Format(e.to_string()))?;
    let grid_path = write(dir, GRID_FILE, &grid_json, &mut hashes)?;
    let manifest = manifest_json(grid, config, inputs, &hashes)?;
    let manifest_path = write(dir, MANIFEST_FILE, &manifest, &mut BTreeMap::new())?;
    Ok(ReportFiles {
        csv,
        text,
        grid: grid_path,
        manifest: manifest_path,
    })
}
