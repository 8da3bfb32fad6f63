//! Candidate pools and the classical pseudo-relevance-feedback reformulators.
//!
//! Every reformulator here is additive: its output starts with the original
//! query verbatim and appends ranked expansion terms.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, QueryId};
use crate::embeddings::{cosine_similarity, EmbeddingTable};
use crate::error::{Error, Result};
use crate::index::{InvertedIndex, SearchResult};

/// Context words on each side of a candidate term.
pub const CONTEXT_RADIUS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TermSource {
    Query,
    Doc(DocId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateTerm {
    pub token: String,
    /// `2 * radius + 1` tokens centred on `token`; `None` pads past the edges.
    pub context: Vec<Option<String>>,
    pub source: TermSource,
    pub index: usize,
}

impl CandidateTerm {
    pub fn context_string(&self) -> String {
        self.context.iter().map(|c| c.as_deref().unwrap_or("_")).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    pub terms: Vec<CandidateTerm>,
    /// Words taken per feedback document.
    pub m: usize,
    /// Feedback documents requested.
    pub k: usize,
    pub radius: usize,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|t| t.token.as_str())
    }

    pub fn query_len(&self) -> usize {
        self.terms.iter().take_while(|t| t.source == TermSource::Query).count()
    }
}

fn windows(tokens: &[&str], source: TermSource, radius: usize, start_index: usize) -> Vec<CandidateTerm> {
    let n = tokens.len() as isize;
    tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let context = (i as isize - radius as isize..=i as isize + radius as isize)
                .map(|j| (0..n).contains(&j).then(|| tokens[j as usize].to_string()))
                .collect();
            CandidateTerm { token: tok.to_string(), context, source, index: start_index + i }
        })
        .collect()
}

/// Query terms followed by the first `m` words of each document in `docs`.
pub fn pool_from_docs(
    index: &InvertedIndex,
    query: &[String],
    docs: &[DocId],
    m: usize,
    k: usize,
    radius: usize,
) -> Result<CandidatePool> {
    if m == 0 || k == 0 {
        return Err(Error::invalid("pool parameters M and K must be at least 1"));
    }
    let q: Vec<&str> = query.iter().map(String::as_str).collect();
    let mut terms = windows(&q, TermSource::Query, radius, 0);
    for &d in docs {
        let toks = index.doc_tokens(d)?;
        let take = &toks[..toks.len().min(m)];
        let next = terms.len();
        terms.extend(windows(take, TermSource::Doc(d), radius, next));
    }
    Ok(CandidatePool { terms, m, k, radius })
}

/// Pool over the top-`k` retrieved documents.
pub fn build_pool(
    index: &InvertedIndex,
    query: &[String],
    results: &SearchResult,
    m: usize,
    k: usize,
) -> Result<CandidatePool> {
    let docs: Vec<DocId> = results.hits.iter().take(k).map(|h| h.0).collect();
    pool_from_docs(index, query, &docs, m, k, CONTEXT_RADIUS)
}

/// Uniform draw among the top-`min(k, len)` results.
pub fn sample_feedback_doc(results: &SearchResult, k: usize, rng: &mut impl Rng) -> Result<DocId> {
    let n = results.len().min(k);
    if n == 0 {
        return Err(Error::invalid("cannot sample a feedback document from an empty result"));
    }
    Ok(results.hits[rng.random_range(0..n)].0)
}

/// Score descending, then the supplied secondary key ascending.
fn rank_desc<T: Ord + Clone>(items: &mut [(T, f64)]) {
    items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
}

/// Per-document TF-IDF terms of one document, `tf * ln(N / df)`, ties broken
/// by first occurrence.
pub fn tfidf_terms(index: &InvertedIndex, doc: DocId) -> Result<Vec<(String, f64)>> {
    let toks = index.doc_tokens(doc)?;
    let mut first: HashMap<&str, usize> = HashMap::new();
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for (i, t) in toks.iter().enumerate() {
        first.entry(t).or_insert(i);
        *tf.entry(t).or_insert(0) += 1;
    }
    let n = index.n_docs() as f64;
    let mut scored: Vec<(usize, f64)> = first
        .iter()
        .map(|(t, &pos)| (pos, tf[t] as f64 * (n / index.doc_freq(t) as f64).ln()))
        .collect();
    rank_desc(&mut scored);
    Ok(scored.into_iter().map(|(pos, s)| (toks[pos].to_string(), s)).collect())
}

pub fn prf_tfidf(query: &[String], index: &InvertedIndex, n: usize, k: usize) -> Result<Vec<String>> {
    if n == 0 || k == 0 {
        return Err(Error::invalid("N and K must be at least 1"));
    }
    let results = index.search(query, k);
    let mut out = query.to_vec();
    for &(doc, _) in &results.hits {
        out.extend(tfidf_terms(index, doc)?.into_iter().take(n).map(|(t, _)| t));
    }
    Ok(out)
}

/// Relevance-model term distribution over `q0 ∪ D0`, sorted best first
/// (ties by token).
pub fn relevance_model(
    query: &[String],
    index: &InvertedIndex,
    docs: &[DocId],
    lambda: f64,
    mu: f64,
) -> Result<Vec<(String, f64)>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("lambda must lie in [0, 1]"));
    }
    if query.is_empty() {
        return Err(Error::invalid("empty query"));
    }
    let mut vocab: Vec<String> = query.to_vec();
    for &d in docs {
        vocab.extend(index.doc_tokens(d)?.into_iter().map(String::from));
    }
    let mut seen = HashSet::new();
    vocab.retain(|t| seen.insert(t.clone()));

    let qlen = query.len() as f64;
    let likelihood: Vec<f64> =
        docs.iter().map(|&d| index.lm_query_likelihood(query, d, mu)).collect::<Result<_>>()?;
    let p_doc = if docs.is_empty() { 0.0 } else { 1.0 / docs.len() as f64 };

    let mut scored = Vec::with_capacity(vocab.len());
    for t in vocab {
        let p_query = query.iter().filter(|w| **w == t).count() as f64 / qlen;
        let mut fb = 0.0;
        for (&d, &lq) in docs.iter().zip(&likelihood) {
            fb += p_doc * index.lm_prob(&t, d, mu)? * lq;
        }
        scored.push((t, (1.0 - lambda) * p_query + lambda * fb));
    }
    rank_desc(&mut scored);
    Ok(scored)
}

pub fn prf_rm(
    query: &[String],
    index: &InvertedIndex,
    n: usize,
    k: usize,
    lambda: f64,
    mu: f64,
) -> Result<Vec<String>> {
    if n == 0 || k == 0 {
        return Err(Error::invalid("N and K must be at least 1"));
    }
    let docs = index.search(query, k).ids();
    if docs.is_empty() {
        return Ok(query.to_vec());
    }
    let scored = relevance_model(query, index, &docs, lambda, mu)?;
    let mut out = query.to_vec();
    out.extend(scored.into_iter().take(n).map(|(t, _)| t));
    Ok(out)
}

/// Candidates ranked by cosine similarity to the mean query embedding, ties
/// by token.
pub fn rank_by_similarity<'a>(
    query: &[String],
    table: &EmbeddingTable,
    candidates: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<(String, f64)>> {
    let qv = table.query_embedding(query)?;
    let mut seen = HashSet::new();
    let mut scored = Vec::new();
    for c in candidates {
        if seen.insert(c) {
            scored.push((c.to_string(), cosine_similarity(table.lookup(c), &qv)?));
        }
    }
    rank_desc(&mut scored);
    Ok(scored)
}

pub fn prf_emb(
    query: &[String],
    index: &InvertedIndex,
    table: &EmbeddingTable,
    n: usize,
    k: usize,
) -> Result<Vec<String>> {
    if n == 0 || k == 0 {
        return Err(Error::invalid("N and K must be at least 1"));
    }
    let results = index.search(query, k);
    let mut cands: Vec<&str> = Vec::new();
    for &(d, _) in &results.hits {
        cands.extend(index.doc_tokens(d)?);
    }
    let ranked = rank_by_similarity(query, table, cands)?;
    let mut out = query.to_vec();
    out.extend(ranked.into_iter().take(n).map(|(t, _)| t));
    Ok(out)
}

pub fn vocab_emb(query: &[String], table: &EmbeddingTable, n: usize) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let ranked = rank_by_similarity(query, table, table.words().iter().map(String::as_str))?;
    let mut out = query.to_vec();
    out.extend(ranked.into_iter().take(n).map(|(t, _)| t));
    Ok(out)
}

/// `qid<TAB>original<TAB>reformulated` rows.
pub fn write_reformulations(rows: &[(QueryId, Vec<String>, Vec<String>)], mut w: impl Write) -> Result<()> {
    writeln!(w, "qid\toriginal\treformulated")?;
    for (qid, q0, q1) in rows {
        writeln!(w, "{qid}\t{}\t{}", q0.join(" "), q1.join(" "))?;
    }
    Ok(())
}
