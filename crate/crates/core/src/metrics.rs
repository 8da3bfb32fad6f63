//! Recall, precision and average precision over the top-K of a ranking.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, QueryId};
use crate::error::{Error, Result};

/// Reward cutoff used when none is configured.
pub const DEFAULT_REWARD_K: usize = 40;

fn check(relevant: &HashSet<DocId>, k: usize) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::invalid("relevant set is empty"));
    }
    if k == 0 {
        return Err(Error::invalid("cutoff k must be at least 1"));
    }
    Ok(())
}

fn hits(retrieved: &[DocId], relevant: &HashSet<DocId>, k: usize) -> usize {
    retrieved.iter().take(k).filter(|d| relevant.contains(d)).count()
}

pub fn recall_at_k(retrieved: &[DocId], relevant: &HashSet<DocId>, k: usize) -> Result<f64> {
    check(relevant, k)?;
    Ok(hits(retrieved, relevant, k) as f64 / relevant.len() as f64)
}

/// Denominator is the number of documents actually retrieved (at most `k`);
/// an empty ranking has precision 0.
pub fn precision_at_k(retrieved: &[DocId], relevant: &HashSet<DocId>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("cutoff k must be at least 1"));
    }
    let n = retrieved.len().min(k);
    if n == 0 {
        return Ok(0.0);
    }
    Ok(hits(retrieved, relevant, k) as f64 / n as f64)
}

pub fn average_precision_at_k(retrieved: &[DocId], relevant: &HashSet<DocId>, k: usize) -> Result<f64> {
    check(relevant, k)?;
    let mut found = 0usize;
    let mut sum = 0.0;
    for (j, d) in retrieved.iter().take(k).enumerate() {
        if relevant.contains(d) {
            found += 1;
            sum += found as f64 / (j + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

pub fn map_at_k(ap: &[f64]) -> Result<f64> {
    if ap.is_empty() {
        return Err(Error::invalid("MAP over an empty query set"));
    }
    Ok(ap.iter().sum::<f64>() / ap.len() as f64)
}

/// Recall at the configured reward cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub k: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { k: DEFAULT_REWARD_K }
    }
}

impl RewardConfig {
    pub fn reward(&self, retrieved: &[DocId], relevant: &HashSet<DocId>) -> Result<f64> {
        recall_at_k(retrieved, relevant, self.k)
    }
}

pub fn reward(retrieved: &[DocId], relevant: &HashSet<DocId>) -> Result<f64> {
    RewardConfig::default().reward(retrieved, relevant)
}

/// Metric cutoffs reported in an evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub recall: usize,
    pub precision: usize,
    pub map: usize,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Cutoffs { recall: 40, precision: 10, map: 40 }
    }
}

impl Cutoffs {
    pub fn depth(&self) -> usize {
        self.recall.max(self.precision).max(self.map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub qid: QueryId,
    pub recall: f64,
    pub precision: f64,
    pub ap: f64,
}

impl QueryScores {
    pub fn compute(qid: QueryId, retrieved: &[DocId], relevant: &HashSet<DocId>, cut: Cutoffs) -> Result<Self> {
        Ok(QueryScores {
            qid,
            recall: recall_at_k(retrieved, relevant, cut.recall)?,
            precision: precision_at_k(retrieved, relevant, cut.precision)?,
            ap: average_precision_at_k(retrieved, relevant, cut.map)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub cutoffs: Cutoffs,
    pub per_query: Vec<QueryScores>,
    pub recall: f64,
    pub precision: f64,
    pub map: f64,
}

impl EvalReport {
    pub fn new(method: impl Into<String>, cutoffs: Cutoffs, per_query: Vec<QueryScores>) -> Result<Self> {
        if per_query.is_empty() {
            return Err(Error::invalid("evaluation over an empty query set"));
        }
        let n = per_query.len() as f64;
        let recall = per_query.iter().map(|q| q.recall).sum::<f64>() / n;
        let precision = per_query.iter().map(|q| q.precision).sum::<f64>() / n;
        let map = map_at_k(&per_query.iter().map(|q| q.ap).collect::<Vec<_>>())?;
        Ok(EvalReport { method: method.into(), cutoffs, per_query, recall, precision, map })
    }

    pub fn header(&self) -> String {
        format!("R@{}\tP@{}\tMAP@{}", self.cutoffs.recall, self.cutoffs.precision, self.cutoffs.map)
    }

    /// One row per query followed by a `mean` row.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "qid\t{}", self.header())?;
        for q in &self.per_query {
            writeln!(w, "{}\t{:.6}\t{:.6}\t{:.6}", q.qid, q.recall, q.precision, q.ap)?;
        }
        writeln!(w, "mean\t{:.6}\t{:.6}\t{:.6}", self.recall, self.precision, self.map)?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "queries": self.per_query.len(),
            format!("R@{}", self.cutoffs.recall): self.recall,
            format!("P@{}", self.cutoffs.precision): self.precision,
            format!("MAP@{}", self.cutoffs.map): self.map,
        })
    }
}
