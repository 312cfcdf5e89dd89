//! Python bindings: scenario generation, classifiers, scoring helpers and the
//! config-driven commands.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use v2m_aml::adversary::CaseId;
use v2m_aml::cgan;
use v2m_aml::commands;
use v2m_aml::config::RunConfig;
use v2m_aml::dataset::{self, FeatureMatrix, PriorityLabel, ScenarioProfile, FEATURE_NAMES};
use v2m_aml::evaluation;
use v2m_aml::models::{self, Hyperparameters, ModelKind, TrainedClassifier};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<FeatureMatrix> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(err("rows have different lengths"));
    }
    Ok(FeatureMatrix::new(rows.concat(), dim))
}

fn config(toml: Option<&str>, output_dir: Option<String>) -> PyResult<RunConfig> {
    let mut cfg = match toml {
        Some(t) => RunConfig::from_toml(t).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(d) = output_dir {
        cfg.output_dir = d.into();
    }
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

#[pyfunction]
fn feature_names() -> Vec<&'static str> {
    FEATURE_NAMES.to_vec()
}

#[pyfunction]
fn default_config() -> PyResult<String> {
    commands::default_config_toml().map_err(err)
}

/// Raw feature rows drawn from the default synthetic profile.
#[pyfunction]
fn generate_scenario(n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let d = dataset::generate_scenario(n, seed, &ScenarioProfile::default()).map_err(err)?;
    Ok(d.observations().iter().map(|o| o.features().to_vec()).collect())
}

#[pyfunction]
fn gan_loss(d_real: Vec<f64>, d_fake: Vec<f64>) -> PyResult<(f64, f64)> {
    cgan::gan_loss(&d_real, &d_fake).map_err(err)
}

#[pyfunction]
fn score_eir(adr: f64, tnr_original: f64) -> PyResult<f64> {
    evaluation::score_eir(adr, tnr_original).map_err(err)
}

/// One of the six classifiers, trained with default hyperparameters.
#[pyclass(name = "Classifier", frozen)]
struct PyClassifier {
    inner: TrainedClassifier,
}

#[pymethods]
impl PyClassifier {
    /// `kind` is one of K-NN, SVM, LR, RF, DT, NB; labels are high/medium/low.
    #[staticmethod]
    #[pyo3(signature = (kind, x, y, seed = 0))]
    fn fit(kind: &str, x: Vec<Vec<f64>>, y: Vec<String>, seed: u64) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(err)?;
        let y = y
            .iter()
            .map(|s| s.parse::<PriorityLabel>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let inner = models::fit(kind, &matrix(&x)?, &y, &Hyperparameters::default(), seed).map_err(err)?;
        Ok(Self { inner })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<&'static str>> {
        let labels = self.inner.predict_all(&matrix(&x)?).map_err(err)?;
        Ok(labels.into_iter().map(PriorityLabel::as_str).collect())
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().short_name()
    }
}

#[pyfunction]
#[pyo3(signature = (config_toml = None, output_dir = None))]
fn gen_data<'py>(py: Python<'py>, config_toml: Option<&str>, output_dir: Option<String>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(config_toml, output_dir)?;
    let s = commands::cmd_gen_data(&cfg).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("dir", s.dir.display().to_string())?;
    d.set_item("edge_train_rows", s.edge_train_rows)?;
    d.set_item("victim_rows", s.victim_rows)?;
    d.set_item("class_counts", s.class_counts.to_vec())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (config_toml = None, output_dir = None))]
fn train_edge<'py>(py: Python<'py>, config_toml: Option<&str>, output_dir: Option<String>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(config_toml, output_dir)?;
    let t = commands::cmd_train_edge(&cfg).map_err(err)?;
    let d = PyDict::new(py);
    for c in &t.comparison {
        d.set_item(c.model.short_name(), (c.report.accuracy, c.report.macro_f1))?;
    }
    d.set_item("knn_is_best", t.knn_is_best())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (case, use_cgan = true, config_toml = None, output_dir = None))]
fn attack<'py>(
    py: Python<'py>,
    case: &str,
    use_cgan: bool,
    config_toml: Option<&str>,
    output_dir: Option<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(config_toml, output_dir)?;
    let case: CaseId = case.parse().map_err(err)?;
    let s = commands::cmd_attack(&cfg, case, use_cgan).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("real_count", s.real_count)?;
    d.set_item("generated_count", s.generated_count)?;
    d.set_item("surrogate", s.report.surrogate_kind.short_name())?;
    d.set_item("adr", s.report.adr)?;
    d.set_item("eir", s.report.eir)?;
    d.set_item("tnr_original", s.report.tnr_original)?;
    Ok(d)
}

/// Runs the full grid and returns it as a JSON string.
#[pyfunction]
#[pyo3(signature = (config_toml = None, output_dir = None))]
fn experiment(config_toml: Option<&str>, output_dir: Option<String>) -> PyResult<String> {
    let cfg = config(config_toml, output_dir)?;
    let s = commands::cmd_experiment(&cfg).map_err(err)?;
    serde_json::to_string(&s.grid).map_err(err)
}

#[pymodule]
fn v2m_aml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(feature_names, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(gan_loss, m)?)?;
    m.add_function(wrap_pyfunction!(score_eir, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train_edge, m)?)?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    Ok(())
}
