//! RL-Oracle: overfit a fresh policy on each small contiguous subset of an
//! evaluation set and average the best rewards reached.

use std::io::Write;
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::QueryRecord;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::eval_rl;
use crate::index::InvertedIndex;
use crate::metrics::{Cutoffs, EvalReport, QueryScores};
use crate::rl::{RlConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub subset_size: usize,
    /// Epochs without improvement of the subset reward before stopping.
    pub patience: usize,
    /// Hard cap on epochs per subset.
    pub max_epochs: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { subset_size: 100, patience: 50, max_epochs: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub subset: usize,
    /// Offset of the subset's first query in the evaluation set.
    pub start: usize,
    pub len: usize,
    pub seed: u64,
    pub best_reward: f64,
    pub epochs: usize,
    /// Scores of the subset's queries under its best parameters.
    pub scores: Vec<QueryScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub subsets: Vec<SubsetResult>,
    /// Mean of the per-subset best rewards.
    pub r_star: f64,
}

impl OracleReport {
    /// Per-query scores across all subsets, as one evaluation table row.
    pub fn eval_report(&self, cut: Cutoffs) -> Result<EvalReport> {
        let rows = self.subsets.iter().flat_map(|s| s.scores.iter().copied()).collect();
        EvalReport::new("rl-oracle", cut, rows)
    }

    pub fn from_subsets(subsets: Vec<SubsetResult>) -> Result<Self> {
        if subsets.is_empty() {
            return Err(Error::invalid("oracle needs at least one subset"));
        }
        let r_star = subsets.iter().map(|s| s.best_reward).sum::<f64>() / subsets.len() as f64;
        Ok(OracleReport { subsets, r_star })
    }

    /// One row per subset, then `mean` with `R*`.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "subset\tstart\tlen\tseed\tepochs\tR*")?;
        for s in &self.subsets {
            writeln!(w, "{}\t{}\t{}\t{}\t{}\t{:.6}", s.subset, s.start, s.len, s.seed, s.epochs, s.best_reward)?;
        }
        writeln!(w, "mean\t\t\t\t\t{:.6}", self.r_star)?;
        Ok(())
    }
}

/// Contiguous `(start, len)` chunks; the last may be short.
pub fn partition(n: usize, size: usize) -> Result<Vec<(usize, usize)>> {
    if size == 0 || size > n {
        return Err(Error::invalid(format!("subset size {size} must lie in 1..={n}")));
    }
    Ok((0..n).step_by(size).map(|s| (s, size.min(n - s))).collect())
}

/// Seed of the model trained on subset `i`.
pub fn subset_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(1 + i as u64)
}

/// Trains one fresh model per subset on that subset alone, keeping the best
/// test-time reward it reaches there.
pub fn rl_oracle(
    queries: &[QueryRecord],
    index: &InvertedIndex,
    table: Arc<EmbeddingTable>,
    rl: &RlConfig,
    cfg: &OracleConfig,
    cut: Cutoffs,
) -> Result<OracleReport> {
    let parts = partition(queries.len(), cfg.subset_size)?;
    let subsets = parts
        .par_iter()
        .enumerate()
        .map(|(i, &(start, len))| {
            let mut c = rl.clone();
            c.train.seed = subset_seed(rl.train.seed, i);
            c.train.epochs = cfg.max_epochs;
            c.train.patience = cfg.patience;
            c.train.eval_every = 0;
            let subset = &queries[start..start + len];
            let run = || -> Result<_> {
                let mut t = Trainer::from_config(c.clone(), table.clone(), index)?;
                let s = t.fit(subset, subset, None)?;
                let scores = eval_rl(&t.model, subset, index, &t.config, t.config.train.rounds, cut)?.per_query;
                Ok((s, scores))
            };
            let (s, scores) = run().map_err(|e| Error::invalid(format!("oracle subset {i} (queries {start}..{}): {e}", start + len)))?;
            info!("oracle subset {i}: R* {:.4} after {} epochs", s.best_valid, s.epochs_run);
            Ok(SubsetResult { subset: i, start, len, seed: c.train.seed, best_reward: s.best_valid, epochs: s.epochs_run, scores })
        })
        .collect::<Result<Vec<_>>>()?;
    OracleReport::from_subsets(subsets)
}
