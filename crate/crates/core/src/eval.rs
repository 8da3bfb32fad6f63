//! Method registry and evaluation runners shared by the CLI and the tests.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, QueryRecord};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::index::{InvertedIndex, DEFAULT_DIRICHLET_MU};
use crate::metrics::{Cutoffs, EvalReport, QueryScores};
use crate::neural::{ModelKind, PolicyModel};
use crate::prf::{prf_emb, prf_rm, prf_tfidf, vocab_emb};
use crate::rl::{reformulate_rounds, RlConfig};

/// Every reformulation method the evaluator knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Raw,
    PrfTfidf,
    PrfRm,
    PrfEmb,
    VocabEmb,
    Sl(ModelKind),
    Rl(ModelKind),
    SlOracle,
    RlOracle,
}

impl Method {
    pub fn is_prf(self) -> bool {
        matches!(self, Method::PrfTfidf | Method::PrfRm | Method::PrfEmb | Method::VocabEmb)
    }

    pub fn needs_embeddings(self) -> bool {
        !matches!(self, Method::Raw | Method::PrfTfidf | Method::PrfRm | Method::SlOracle)
    }

    /// Methods evaluated from a trained checkpoint.
    pub fn needs_checkpoint(self) -> bool {
        matches!(self, Method::Sl(_) | Method::Rl(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Raw => f.write_str("raw"),
            Method::PrfTfidf => f.write_str("prf-tfidf"),
            Method::PrfRm => f.write_str("prf-rm"),
            Method::PrfEmb => f.write_str("prf-emb"),
            Method::VocabEmb => f.write_str("vocab-emb"),
            Method::Sl(k) => write!(f, "sl-{k}"),
            Method::Rl(k) => write!(f, "rl-{k}"),
            Method::SlOracle => f.write_str("sl-oracle"),
            Method::RlOracle => f.write_str("rl-oracle"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "raw" => Method::Raw,
            "prf-tfidf" => Method::PrfTfidf,
            "prf-rm" => Method::PrfRm,
            "prf-emb" => Method::PrfEmb,
            "vocab-emb" => Method::VocabEmb,
            "sl-oracle" => Method::SlOracle,
            "rl-oracle" => Method::RlOracle,
            "sl-ff" => Method::Sl(ModelKind::Ff),
            "sl-cnn" => Method::Sl(ModelKind::Cnn),
            _ => match s.strip_prefix("rl-").map(str::parse::<ModelKind>) {
                Some(Ok(k)) => Method::Rl(k),
                _ => return Err(Error::invalid(format!("unknown method {s:?}"))),
            },
        };
        Ok(m)
    }
}

/// Settings of the classical reformulators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrfParams {
    /// Terms appended (per document for PRF-TFIDF).
    pub n: usize,
    /// Feedback documents.
    pub k: usize,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for PrfParams {
    fn default() -> Self {
        PrfParams { n: 300, k: 9, lambda: 0.5, mu: DEFAULT_DIRICHLET_MU }
    }
}

/// Grid over the number of terms and feedback documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrfGrid {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
}

impl Default for PrfGrid {
    fn default() -> Self {
        PrfGrid { n: vec![10, 50, 100, 200, 300, 500], k: vec![1, 3, 5, 9, 11] }
    }
}

/// The reformulated query of a classical method.
pub fn prf_query(
    method: Method,
    query: &[String],
    index: &InvertedIndex,
    table: Option<&EmbeddingTable>,
    p: PrfParams,
) -> Result<Vec<String>> {
    let table = || table.ok_or_else(|| Error::invalid(format!("{method} needs word embeddings")));
    match method {
        Method::Raw => Ok(query.to_vec()),
        Method::PrfTfidf => prf_tfidf(query, index, p.n, p.k),
        Method::PrfRm => prf_rm(query, index, p.n, p.k, p.lambda, p.mu),
        Method::PrfEmb => prf_emb(query, index, table()?, p.n, p.k),
        Method::VocabEmb => vocab_emb(query, table()?, p.n),
        other => Err(Error::invalid(format!("{other} is not a classical reformulator"))),
    }
}

/// Scores every query from the ranking `retrieve` returns for it.
pub fn evaluate_with<F>(name: &str, queries: &[QueryRecord], cut: Cutoffs, retrieve: F) -> Result<EvalReport>
where
    F: Fn(&QueryRecord) -> Result<Vec<DocId>> + Sync,
{
    let rows = queries
        .par_iter()
        .map(|q| QueryScores::compute(q.qid, &retrieve(q)?, &q.relevant_set(), cut))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::new(name, cut, rows)
}

pub fn eval_prf(
    method: Method,
    queries: &[QueryRecord],
    index: &InvertedIndex,
    table: Option<&EmbeddingTable>,
    p: PrfParams,
    cut: Cutoffs,
) -> Result<EvalReport> {
    evaluate_with(&method.to_string(), queries, cut, |q| {
        let q1 = prf_query(method, &q.tokens, index, table, p)?;
        Ok(index.search(&q1, cut.depth()).ids())
    })
}

pub fn eval_raw(queries: &[QueryRecord], index: &InvertedIndex, cut: Cutoffs) -> Result<EvalReport> {
    eval_prf(Method::Raw, queries, index, None, PrfParams::default(), cut)
}

/// Evaluates a trained policy with `rounds` reformulation rounds.
pub fn eval_rl(
    model: &PolicyModel,
    queries: &[QueryRecord],
    index: &InvertedIndex,
    cfg: &RlConfig,
    rounds: usize,
    cut: Cutoffs,
) -> Result<EvalReport> {
    let name = Method::Rl(model.config().kind).to_string();
    evaluate_with(&name, queries, cut, |q| {
        Ok(reformulate_rounds(&q.tokens, index, model, cfg, rounds, cut.depth())?.result.ids())
    })
}

/// Picks the grid point with the best mean recall on `valid`; earlier grid
/// points win ties.
pub fn prf_grid_search(
    method: Method,
    valid: &[QueryRecord],
    index: &InvertedIndex,
    table: Option<&EmbeddingTable>,
    base: PrfParams,
    grid: &PrfGrid,
    cut: Cutoffs,
) -> Result<(PrfParams, EvalReport)> {
    let ks: &[usize] = if method == Method::VocabEmb { &grid.k[..grid.k.len().min(1)] } else { &grid.k };
    let mut best: Option<(PrfParams, EvalReport)> = None;
    for &n in &grid.n {
        for &k in ks {
            let p = PrfParams { n, k, ..base };
            let rep = eval_prf(method, valid, index, table, p, cut)?;
            if best.as_ref().is_none_or(|(_, b)| rep.recall > b.recall) {
                best = Some((p, rep));
            }
        }
    }
    best.ok_or_else(|| Error::invalid("empty PRF grid"))
}

/// Test-time reformulation with the pool built from `m` words per document,
/// once per value of `m`.
pub fn sweep_candidates(
    model: &PolicyModel,
    queries: &[QueryRecord],
    index: &InvertedIndex,
    cfg: &RlConfig,
    ms: &[usize],
    cut: Cutoffs,
) -> Result<Vec<(usize, EvalReport)>> {
    ms.iter()
        .map(|&m| {
            let mut c = cfg.clone();
            c.pool.m = m;
            Ok((m, eval_rl(model, queries, index, &c, cfg.train.rounds, cut)?))
        })
        .collect()
}

pub fn write_sweep_tsv(rows: &[(usize, EvalReport)], mut w: impl Write) -> Result<()> {
    let Some((_, first)) = rows.first() else { return Ok(()) };
    writeln!(w, "M\t{}", first.header())?;
    for (m, r) in rows {
        writeln!(w, "{m}\t{:.6}\t{:.6}\t{:.6}", r.recall, r.precision, r.map)?;
    }
    Ok(())
}

/// Mean number of terms the policy adds in the first reformulation round.
pub fn mean_selection_size(
    model: &PolicyModel,
    queries: &[QueryRecord],
    index: &InvertedIndex,
    cfg: &RlConfig,
) -> Result<f64> {
    let sizes = queries
        .par_iter()
        .map(|q| {
            let out = reformulate_rounds(&q.tokens, index, model, cfg, 1, cfg.train.reward_k)?;
            Ok(out.rounds.first().map_or(0, |r| r.selected.len()))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64)
}

/// Human-readable table: one row per report.
pub fn write_report_table(reports: &[EvalReport], mut w: impl Write) -> Result<()> {
    let Some(first) = reports.first() else { return Ok(()) };
    writeln!(w, "method\tqueries\t{}", first.header())?;
    for r in reports {
        writeln!(w, "{}\t{}\t{:.4}\t{:.4}\t{:.4}", r.method, r.per_query.len(), r.recall, r.precision, r.map)?;
    }
    Ok(())
}
