//! Experiment configuration file (JSON). Command-line flags override it.
//!
//! ```json
//! {
//!   "paths": { "corpus_dir": "ud/", "task_dir": "tasks/", "output_dir": "out/" },
//!   "suite": { "perturbations": ["ORIGINAL", "TARG", "L2"], "models": ["mbert"] },
//!   "sampler": { "n_train": 2000 },
//!   "train": { "lr": 0.001 },
//!   "models": [
//!     { "id": "mbert", "backend": { "kind": "archive", "path": "mbert.mpeb" } },
//!     { "id": "chlstm", "backend": { "kind": "char_lstm" } }
//!   ],
//!   "seed": 0
//! }
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{ArchiveReader, CachedProvider, EmbedError, HttpConfig, HttpProvider, ModelInfo, RandomControl, RandomMode, StaticEmbeddings};
use crate::nn::{LayerMode, ProbeVariant, TrainConfig};
use crate::perturb::Perturbation;
use crate::runner::{Encoder, PoolingChoice, ShapleyMode, CHAR_LSTM_ID};
use crate::sampler::SamplerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{what} {path} does not exist")]
    MissingPath { what: String, path: PathBuf },
    #[error("model id {0:?} is declared twice")]
    DuplicateModel(String),
    #[error("model {0:?} is not declared")]
    UnknownModel(String),
    #[error("model {id}: {source}")]
    Backend {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus_dir: Option<PathBuf>,
    pub task_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSelection {
    /// Task names; empty means every task under the task directory.
    pub tasks: Vec<String>,
    pub perturbations: Vec<Perturbation>,
    pub models: Vec<String>,
    pub variant: ProbeVariant,
    pub layer_mode: LayerMode,
    pub pooling: PoolingChoice,
    pub n_seeds: usize,
    pub shapley_mode: ShapleyMode,
    pub shapley_seeds: usize,
}

impl Default for SuiteSelection {
    fn default() -> Self {
        Self {
            tasks: Vec::new(),
            perturbations: Perturbation::standard_suite(),
            models: Vec::new(),
            variant: ProbeVariant::Mlp50,
            layer_mode: LayerMode::WeightedSum,
            pooling: PoolingChoice::Auto,
            n_seeds: 10,
            shapley_mode: ShapleyMode::Retrain,
            shapley_seeds: 1,
        }
    }
}

/// How to obtain vectors for one model id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Archive {
        path: PathBuf,
    },
    Http(HttpConfig),
    RandomControl {
        mode: RandomMode,
        n_layers: usize,
        dim: usize,
        #[serde(default)]
        seed: u64,
        /// Word-level embedding layer for `random_layers`.
        #[serde(default)]
        static_vectors: Option<PathBuf>,
    },
    StaticVectors {
        path: PathBuf,
    },
    CharLstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub backend: Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub suite: SuiteSelection,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub models: Vec<ModelEntry>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths { output_dir: PathBuf::from("out"), ..Paths::default() },
            suite: SuiteSelection::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            models: vec![ModelEntry { id: CHAR_LSTM_ID.into(), backend: Backend::CharLstm }],
            seed: 0,
        }
    }
}

fn must_exist(what: &str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath { what: what.into(), path: path.to_path_buf() })
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Referenced paths exist and model ids are unique.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(p) = &self.paths.corpus_dir {
            must_exist("corpus directory", p)?;
        }
        if let Some(p) = &self.paths.task_dir {
            must_exist("task directory", p)?;
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            if !seen.insert(m.id.as_str()) {
                return Err(ConfigError::DuplicateModel(m.id.clone()));
            }
            match &m.backend {
                Backend::Archive { path } | Backend::StaticVectors { path } => must_exist(&format!("model {} file", m.id), path)?,
                Backend::RandomControl { static_vectors: Some(path), .. } => must_exist(&format!("model {} static vectors", m.id), path)?,
                Backend::CharLstm if m.id != CHAR_LSTM_ID => {
                    return Err(ConfigError::Invalid(format!("the character LSTM must be registered as {CHAR_LSTM_ID:?}, not {:?}", m.id)))
                }
                _ => {}
            }
        }
        for id in &self.suite.models {
            if !seen.contains(id.as_str()) {
                return Err(ConfigError::UnknownModel(id.clone()));
            }
        }
        self.sampler.validate().map_err(ConfigError::Invalid)?;
        self.train.validate().map_err(ConfigError::Invalid)
    }

    pub fn model(&self, id: &str) -> Result<&ModelEntry, ConfigError> {
        self.models.iter().find(|m| m.id == id).ok_or_else(|| ConfigError::UnknownModel(id.into()))
    }
}

/// Open the backend of `entry`, wrapped in an in-memory cache.
pub fn build_encoder(entry: &ModelEntry) -> Result<Encoder, ConfigError> {
    let id = entry.id.clone();
    let wrap = |source: EmbedError| ConfigError::Backend { id: id.clone(), source };
    let cached = |p: Arc<dyn crate::embedding::EmbeddingProvider>| Encoder::Embeddings(Arc::new(CachedProvider::new(p)));
    Ok(match &entry.backend {
        Backend::CharLstm => Encoder::CharLstm,
        Backend::Archive { path } => {
            let reader = ArchiveReader::open(path).map_err(wrap)?;
            if reader.metadata().model_id != entry.id {
                return Err(ConfigError::Invalid(format!("archive {} holds model {:?}, not {:?}", path.display(), reader.metadata().model_id, entry.id)));
            }
            cached(Arc::new(reader))
        }
        Backend::Http(config) => {
            let provider = HttpProvider::connect(config.clone(), None).map_err(wrap)?;
            if provider_id(&provider) != entry.id {
                return Err(ConfigError::Invalid(format!("service at {} serves {:?}, not {:?}", config.base_url, provider_id(&provider), entry.id)));
            }
            cached(Arc::new(provider))
        }
        Backend::StaticVectors { path } => cached(Arc::new(StaticEmbeddings::load_vec(path, &entry.id).map_err(wrap)?)),
        Backend::RandomControl { mode, n_layers, dim, seed, static_vectors } => {
            let info = ModelInfo { model_id: entry.id.clone(), n_layers: *n_layers, dim: *dim, tokenizer: "random-control".into() };
            let mut control = RandomControl::new(info, *mode, *seed);
            if let Some(path) = static_vectors {
                control = control.with_static_layer(StaticEmbeddings::load_vec(path, &entry.id).map_err(wrap)?).map_err(wrap)?;
            }
            cached(Arc::new(control))
        }
    })
}

fn provider_id(p: &dyn crate::embedding::EmbeddingProvider) -> String {
    p.info().model_id.clone()
}
