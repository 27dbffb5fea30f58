//! Run configuration: one TOML file covering inputs, pool building,
//! selection, aggregation weights, service endpoints and loss settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::EndpointConfig;
use crate::corruptions::PoolConfig;
use crate::losses::LossConfig;
use crate::metrics::{AggregateWeights, AlignOptions};
use crate::selection::SelectionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Annotated examples, one JSON object per line.
    pub corpus: Option<PathBuf>,
    /// Diverse-beam outputs for relevance pools.
    pub beams: Option<PathBuf>,
    /// Paraphrase demonstrations: `{"original", "paraphrase"}` per line.
    pub demonstrations: Option<PathBuf>,
    /// Entity index TSV for extrinsic swaps; built from the corpus if absent.
    pub entity_index: Option<PathBuf>,
    /// Fine-tuned baseline score table used to fit normalization stats.
    pub baseline_scores: Option<PathBuf>,
}

impl DataConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.beams,
            &mut self.demonstrations,
            &mut self.entity_index,
            &mut self.baseline_scores,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Source sentences aligned per summary sentence for FactScore.
    pub max_aligned: usize,
    /// Dimension of the offline stand-in latents used when none are supplied.
    pub latent_dim: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { max_aligned: AlignOptions::default().max_aligned, latent_dim: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for pool construction; selection has its own under `[selection]`.
    pub seed: u64,
    pub data: DataConfig,
    pub pool: PoolConfig,
    pub selection: SelectionConfig,
    pub weights: AggregateWeights,
    pub metrics: MetricsConfig,
    pub endpoints: EndpointConfig,
    pub losses: LossConfig,
    /// Directory relative data paths were resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            data: DataConfig::default(),
            pool: PoolConfig::default(),
            selection: SelectionConfig::default(),
            weights: AggregateWeights::default(),
            metrics: MetricsConfig::default(),
            endpoints: EndpointConfig::default(),
            losses: LossConfig::default(),
            base_dir: None,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Config =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_owned(), source })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_owned();
        cfg.data.resolve(&base);
        cfg.base_dir = Some(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.selection.validate().map_err(|e| invalid(&e))?;
        self.weights.validate().map_err(|e| invalid(&e))?;
        self.losses.validate().map_err(|e| invalid(&e))?;
        for ep in [&self.endpoints.infill, &self.endpoints.paraphrase, &self.endpoints.score].into_iter().flatten() {
            ep.validate().map_err(|e| invalid(&e))?;
        }
        if self.metrics.max_aligned == 0 {
            return Err(ConfigError::Invalid("metrics.max_aligned must be >= 1".into()));
        }
        if self.metrics.latent_dim == 0 {
            return Err(ConfigError::Invalid("metrics.latent_dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn align_options(&self) -> AlignOptions {
        AlignOptions { max_aligned: self.metrics.max_aligned, ..AlignOptions::default() }
    }

    /// SHA-256 over the canonical JSON form, with auth tokens left out and
    /// data paths as written in the file.
    pub fn hash(&self) -> String {
        let mut redacted = self.clone();
        if let Some(base) = &self.base_dir {
            let d = &mut redacted.data;
            for p in [&mut d.corpus, &mut d.beams, &mut d.demonstrations, &mut d.entity_index, &mut d.baseline_scores]
                .into_iter()
                .flatten()
            {
                if let Ok(rel) = p.strip_prefix(base) {
                    *p = rel.to_owned();
                }
            }
        }
        for ep in [&mut redacted.endpoints.infill, &mut redacted.endpoints.paraphrase, &mut redacted.endpoints.score]
            .into_iter()
            .flatten()
        {
            ep.auth_token = None;
        }
        let json = serde_json::to_vec(&redacted).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }
}
