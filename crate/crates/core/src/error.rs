use thiserror::Error;

use crate::adversary::AttackError;
use crate::cgan::CganError;
use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::evaluation::EvalError;
use crate::models::ModelError;

/// Top-level error; the variant prefix names the module that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("models: {0}")]
    Models(#[from] ModelError),
    #[error("cgan: {0}")]
    Cgan(#[from] CganError),
    #[error("adversary: {0}")]
    Attack(#[from] AttackError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
