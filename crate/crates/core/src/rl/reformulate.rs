use std::io::Write;

use super::{decode_sequence, expand_query, select_terms_test, RlConfig};
use crate::corpus::QueryId;
use crate::error::Result;
use crate::index::{InvertedIndex, SearchResult};
use crate::neural::PolicyModel;
use crate::prf::{build_pool, CandidatePool};

/// One retrieve-then-reformulate step.
#[derive(Debug, Clone, PartialEq)]
pub struct Reformulation {
    pub pool: CandidatePool,
    /// Selected pool indices, in pool order (generation order for sequence
    /// models).
    pub selected: Vec<usize>,
    /// Per-candidate selection probabilities; absent for sequence models.
    pub probs: Option<Vec<f64>>,
    pub query: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundsOutput {
    pub result: SearchResult,
    pub rounds: Vec<Reformulation>,
}

impl RoundsOutput {
    pub fn final_query(&self) -> Option<&[String]> {
        self.rounds.last().map(|r| r.query.as_slice())
    }
}

/// Test-time choice of expansion terms: thresholding for per-term models,
/// beam decoding for sequence models.
pub fn select_terms(
    model: &PolicyModel,
    q0: &[String],
    pool: &CandidatePool,
    cfg: &RlConfig,
) -> Result<(Vec<usize>, Option<Vec<f64>>)> {
    if model.config().kind.is_sequential() {
        let h = decode_sequence(model, q0, pool, cfg.train.beam, cfg.train.max_len)?;
        Ok((h.terms, None))
    } else {
        let probs = model.term_probabilities(q0, pool)?;
        Ok((select_terms_test(&probs, cfg.train.epsilon), Some(probs)))
    }
}

/// Retrieves with `q0`, then `rounds` times builds a pool from the latest
/// results, selects terms and retrieves again with `q0` plus the selection.
pub fn reformulate_rounds(
    q0: &[String],
    index: &InvertedIndex,
    model: &PolicyModel,
    cfg: &RlConfig,
    rounds: usize,
    depth: usize,
) -> Result<RoundsOutput> {
    if rounds == 0 {
        return Err(crate::error::Error::invalid("rounds must be at least 1"));
    }
    let search_depth = depth.max(cfg.pool.k);
    let mut result = index.search(q0, search_depth);
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        if result.is_empty() {
            break;
        }
        let pool = build_pool(index, q0, &result, cfg.pool.m, cfg.pool.k)?;
        let (selected, probs) = select_terms(model, q0, &pool, cfg)?;
        let query = expand_query(q0, selected.iter().map(|&i| pool.terms[i].token.clone()));
        result = index.search(&query, search_depth);
        out.push(Reformulation { pool, selected, probs, query });
    }
    result.hits.truncate(depth);
    Ok(RoundsOutput { result, rounds: out })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRow {
    pub qid: QueryId,
    pub term: String,
    pub context: String,
    pub p: f64,
}

impl ProbabilityRow {
    pub fn from_reformulation(qid: QueryId, r: &Reformulation) -> Vec<ProbabilityRow> {
        let Some(probs) = &r.probs else { return vec![] };
        r.pool
            .terms
            .iter()
            .zip(probs)
            .map(|(t, &p)| ProbabilityRow { qid, term: t.token.clone(), context: t.context_string(), p })
            .collect()
    }
}

/// `qid term context P` rows with a header line.
pub fn write_probability_dump(rows: &[ProbabilityRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "qid\tterm\tcontext\tP")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{:.6}", r.qid, r.term, r.context, r.p)?;
    }
    Ok(())
}
