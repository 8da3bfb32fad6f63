//! The run configuration file: every section a command may read.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticConfig;
use crate::error::{Error, Result};
use crate::eval::{PrfGrid, PrfParams};
use crate::metrics::Cutoffs;
use crate::oracle::OracleConfig;
use crate::rl::{AdamConfig, ModelSection, PoolSection, RlConfig, TrainSection};
use crate::supervised::SlConfig;

/// Word vectors generated alongside a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub noise: f64,
    pub oov_rate: f64,
    pub seed: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection { dim: 32, noise: 1.0, oov_rate: 0.0, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub pool: PoolSection,
    pub train: TrainSection,
    pub adam: AdamConfig,
    pub sl: SlConfig,
    pub prf: PrfParams,
    pub prf_grid: PrfGrid,
    pub oracle: OracleConfig,
    pub eval: Cutoffs,
    pub synthetic: SyntheticConfig,
    pub embeddings: EmbeddingSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn rl(&self) -> RlConfig {
        RlConfig { model: self.model.clone(), pool: self.pool, train: self.train.clone(), adam: self.adam }
    }

    /// Applies one seed to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.sl.seed = seed;
        self.synthetic.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.rl().validate()?;
        self.sl.adam.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.sl.threshold) {
            return bad("sl.threshold must lie in [0, 1]");
        }
        if self.prf.n == 0 || self.prf.k == 0 || !(0.0..=1.0).contains(&self.prf.lambda) || self.prf.mu <= 0.0 {
            return bad("prf needs n, k >= 1, lambda in [0, 1] and mu > 0");
        }
        if self.prf_grid.n.contains(&0) || self.prf_grid.k.contains(&0) {
            return bad("prf_grid values must be positive");
        }
        if self.oracle.subset_size == 0 || self.oracle.max_epochs == 0 || self.oracle.patience == 0 {
            return bad("oracle sizes must be positive");
        }
        if self.eval.recall == 0 || self.eval.precision == 0 || self.eval.map == 0 {
            return bad("eval cutoffs must be positive");
        }
        if self.embeddings.dim == 0 || self.embeddings.noise < 0.0 || !(0.0..1.0).contains(&self.embeddings.oov_rate) {
            return bad("embeddings need dim >= 1, noise >= 0 and oov_rate in [0, 1)");
        }
        Ok(())
    }
}
