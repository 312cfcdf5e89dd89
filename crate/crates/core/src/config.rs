//! Declarative run configuration, stored as TOML.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::adversary::EvasionAttackConfig;
use crate::cgan::CganConfig;
use crate::dataset::{BenchmarkConfig, ColumnMapping, ScenarioProfile};
use crate::evaluation::GridConfig;
use crate::models::Hyperparameters;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("[{section}] {message}")]
    Invalid { section: &'static str, message: String },
}

/// Where the observation pool comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic {
        #[serde(default)]
        profile: ScenarioProfile,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        columns: ColumnMapping,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            profile: ScenarioProfile::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Every output file is written below this directory.
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    pub benchmark: BenchmarkConfig,
    pub models: Hyperparameters,
    pub cgan: CganConfig,
    pub attack: EvasionAttackConfig,
    pub grid: GridConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 2024,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetSource::default(),
            benchmark: BenchmarkConfig::default(),
            models: Hyperparameters::default(),
            cgan: CganConfig::default(),
            attack: EvasionAttackConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

fn invalid(section: &'static str) -> impl Fn(String) -> ConfigError {
    move |message| ConfigError::Invalid { section, message }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Checks every section; nothing is run or written before this passes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.master_seed > i64::MAX as u64 {
            return Err(invalid("root")("master_seed must fit in a signed 64-bit integer".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("root")("output_dir must not be empty".into()));
        }
        match &self.dataset {
            DatasetSource::Synthetic { profile } => profile.validate().map_err(|e| invalid("dataset")(e.to_string()))?,
            DatasetSource::Csv { path, .. } => {
                if path.as_os_str().is_empty() {
                    return Err(invalid("dataset")("csv path must not be empty".into()));
                }
            }
        }
        self.benchmark.validate().map_err(|e| invalid("benchmark")(e.to_string()))?;
        self.models.validate().map_err(|e| invalid("models")(e.to_string()))?;
        self.cgan.validate().map_err(|e| invalid("cgan")(e.to_string()))?;
        self.attack.validate().map_err(|e| invalid("attack")(e.to_string()))?;
        self.grid.validate().map_err(|e| invalid("grid")(e.to_string()))?;
        Ok(())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is always serializable")
    }
}
