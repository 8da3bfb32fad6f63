//! REINFORCE training of the reformulator, test-time selection and decoding.

mod adam;
mod decode;
mod reformulate;
mod train;

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::ModelKind;

pub use adam::{Adam, AdamConfig};
pub use decode::{beam_search, decode_sequence, enumerate_sequences, Hypothesis};
pub use reformulate::{
    reformulate_rounds, select_terms, write_probability_dump, ProbabilityRow, Reformulation, RoundsOutput,
};
pub use train::{EpisodeTrace, LogRecord, TrainSummary, Trainer};

/// How the entropy regulariser treats each term's selection probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyForm {
    /// `P log P` only.
    #[default]
    PLogP,
    /// Full Bernoulli entropy, `P log P + (1 - P) log (1 - P)`.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub d: usize,
    pub gated: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { kind: ModelKind::Cnn, d: 32, gated: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSection {
    /// Words taken from each feedback document.
    pub m: usize,
    /// Feedback documents.
    pub k: usize,
}

impl Default for PoolSection {
    fn default() -> Self {
        PoolSection { m: 300, k: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Test-time selection threshold.
    pub epsilon: f64,
    /// Entropy coefficient λ.
    pub entropy: f64,
    pub entropy_form: EntropyForm,
    /// Value-loss scale α.
    pub value_alpha: f64,
    /// Recall cutoff of the reward.
    pub reward_k: usize,
    /// Reformulation rounds at evaluation time.
    pub rounds: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Evaluations without validation improvement before stopping.
    pub patience: usize,
    /// Episodes between validation runs; 0 means once per epoch.
    pub eval_every: usize,
    pub batch_size: usize,
    pub beam: usize,
    pub max_len: usize,
    /// Global-norm gradient clip for recurrent models.
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epsilon: 0.5,
            entropy: 1e-3,
            entropy_form: EntropyForm::PLogP,
            value_alpha: 0.1,
            reward_k: crate::metrics::DEFAULT_REWARD_K,
            rounds: 2,
            seed: 0,
            epochs: 20,
            patience: 20,
            eval_every: 0,
            batch_size: 1,
            beam: 4,
            max_len: 50,
            clip_norm: 1.0,
        }
    }
}

/// Everything a training or evaluation run reads from its config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub model: ModelSection,
    pub pool: PoolSection,
    pub train: TrainSection,
    pub adam: AdamConfig,
}

impl RlConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RlConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.model.d == 0 {
            return bad("model.d must be positive");
        }
        if self.pool.m == 0 || self.pool.k == 0 {
            return bad("pool.m and pool.k must be positive");
        }
        if !(0.0..=1.0).contains(&t.epsilon) {
            return bad("train.epsilon must lie in [0, 1]");
        }
        if t.entropy < 0.0 || !t.entropy.is_finite() {
            return bad("train.entropy must be non-negative");
        }
        if t.value_alpha <= 0.0 || !t.value_alpha.is_finite() {
            return bad("train.value_alpha must be positive");
        }
        if t.reward_k == 0 || t.rounds == 0 || t.batch_size == 0 || t.beam == 0 || t.max_len == 0 {
            return bad("train.reward_k, rounds, batch_size, beam and max_len must be at least 1");
        }
        if t.clip_norm <= 0.0 {
            return bad("train.clip_norm must be positive");
        }
        self.adam.validate()
    }
}

/// Indices of candidates with `P > epsilon`, in pool order.
pub fn select_terms_test(probs: &[f64], epsilon: f64) -> Vec<usize> {
    probs.iter().enumerate().filter(|(_, p)| **p > epsilon).map(|(i, _)| i).collect()
}

/// One independent Bernoulli draw per candidate.
pub fn select_terms_train(probs: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    probs.iter().enumerate().filter(|(_, p)| rng.random::<f64>() < **p).map(|(i, _)| i).collect()
}

/// `C_a = (R - R̄) Σ -log P(t)` over the selected terms.
pub fn reinforce_loss(reward: f64, baseline: f64, selected_probs: &[f64]) -> f64 {
    (reward - baseline) * selected_probs.iter().map(|p| -p.ln()).sum::<f64>()
}

/// `C_b = α (R - R̄)²`.
pub fn value_loss(reward: f64, baseline: f64, alpha: f64) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(Error::invalid("value-loss scale alpha must be positive"));
    }
    Ok(alpha * (reward - baseline).powi(2))
}

/// `C_H = -λ Σ P log P`.
pub fn entropy_reg(probs: &[f64], lambda: f64) -> f64 {
    -lambda * probs.iter().map(|p| p * p.ln()).sum::<f64>()
}

/// Joins `q0` and the selected candidates in pool order.
pub fn expand_query(q0: &[String], tokens: impl IntoIterator<Item = impl Into<String>>) -> Vec<String> {
    q0.iter().cloned().chain(tokens.into_iter().map(Into::into)).collect()
}


#[cfg(test)]
mod experiments;
