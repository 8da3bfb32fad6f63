//! Supervised term selection: per-term relevance labels, a binary classifier
//! over the same scorer the policy uses, and the SL-Oracle.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{QueryId, QueryRecord};
use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::metrics::{Cutoffs, EvalReport, QueryScores, RewardConfig};
use crate::neural::{Graph, Group, PolicyModel};
use crate::prf::{build_pool, CandidatePool};
use crate::rl::{expand_query, Adam, AdamConfig};

/// Minimum relative reward gain for a term to count as relevant.
pub const RELEVANCE_THRESHOLD: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermLabel {
    pub qid: QueryId,
    /// Position in the candidate pool.
    pub term: usize,
    pub token: String,
    /// Reward of `q0`.
    pub r: f64,
    /// Reward of `q0` plus this term alone.
    pub r_prime: f64,
    pub relevant: bool,
}

/// `(R' - R) / R > 0.005`; when `R = 0` any gain counts.
pub fn is_relevant(r: f64, r_prime: f64) -> bool {
    if r > 0.0 {
        (r_prime - r) / r > RELEVANCE_THRESHOLD
    } else {
        r_prime > 0.0
    }
}

/// Labels every candidate by retrieving with `q0` plus that term alone.
pub fn label_terms(
    query: &QueryRecord,
    pool: &CandidatePool,
    index: &InvertedIndex,
    reward: RewardConfig,
) -> Result<Vec<TermLabel>> {
    if pool.is_empty() {
        return Err(Error::invalid(format!("query {}: empty candidate pool", query.qid)));
    }
    let relevant = query.relevant_set();
    let r = reward.reward(&index.search(&query.tokens, reward.k).ids(), &relevant)?;
    pool.terms
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let q = expand_query(&query.tokens, [t.token.clone()]);
            let r_prime = reward.reward(&index.search(&q, reward.k).ids(), &relevant).map_err(|e| {
                Error::invalid(format!("query {}: labelling term {i} ({}): {e}", query.qid, t.token))
            })?;
            Ok(TermLabel { qid: query.qid, term: i, token: t.token.clone(), r, r_prime, relevant: is_relevant(r, r_prime) })
        })
        .collect()
}

/// A query, its deterministic pool over the top-`k` documents, and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    pub query: QueryRecord,
    pub pool: CandidatePool,
    pub labels: Vec<TermLabel>,
}

impl LabeledPool {
    pub fn targets(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.relevant).collect()
    }

    pub fn positives(&self) -> impl Iterator<Item = &TermLabel> {
        self.labels.iter().filter(|l| l.relevant)
    }
}

/// Pool over the top-`k` documents of each query, `m` words each.
pub fn query_pool(query: &QueryRecord, index: &InvertedIndex, m: usize, k: usize) -> Result<CandidatePool> {
    let res = index.search(&query.tokens, k);
    build_pool(index, &query.tokens, &res, m, k)
}

/// Builds pools and labels them, reusing `cache` entries whose term count
/// matches the pool. Queries retrieving nothing are skipped.
pub fn label_queries(
    queries: &[QueryRecord],
    index: &InvertedIndex,
    m: usize,
    k: usize,
    reward: RewardConfig,
    cache: Option<&LabelCache>,
) -> Result<Vec<LabeledPool>> {
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let pool = query_pool(q, index, m, k)?;
        if pool.len() == pool.query_len() {
            continue;
        }
        let labels = match cache.and_then(|c| c.get(q.qid, &pool)) {
            Some(l) => l,
            None => label_terms(q, &pool, index, reward)?,
        };
        out.push(LabeledPool { query: q.clone(), pool, labels });
    }
    Ok(out)
}

/// Share of positively labelled candidates over all labelled candidates.
pub fn positive_fraction(data: &[LabeledPool]) -> f64 {
    let (pos, all) = data
        .iter()
        .flat_map(|d| &d.labels)
        .fold((0usize, 0usize), |(p, a), l| (p + l.relevant as usize, a + 1));
    if all == 0 {
        0.0
    } else {
        pos as f64 / all as f64
    }
}

/// Labels keyed by query, as stored in the TSV cache.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelCache {
    by_query: HashMap<QueryId, Vec<TermLabel>>,
}

impl LabelCache {
    pub fn from_pools(data: &[LabeledPool]) -> Self {
        LabelCache { by_query: data.iter().map(|d| (d.query.qid, d.labels.clone())).collect() }
    }

    pub fn len(&self) -> usize {
        self.by_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    /// Cached labels if they line up with `pool` token for token.
    pub fn get(&self, qid: QueryId, pool: &CandidatePool) -> Option<Vec<TermLabel>> {
        let l = self.by_query.get(&qid)?;
        let fits = l.len() == pool.len() && l.iter().zip(pool.tokens()).all(|(l, t)| l.token == t);
        fits.then(|| l.clone())
    }

    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "qid\tterm\ttoken\tR\tR'\trelevant")?;
        let mut qids: Vec<_> = self.by_query.keys().copied().collect();
        qids.sort_unstable();
        for q in qids {
            for l in &self.by_query[&q] {
                writeln!(w, "{}\t{}\t{}\t{}\t{}\t{}", l.qid, l.term, l.token, l.r, l.r_prime, l.relevant as u8)?;
            }
        }
        Ok(())
    }

    pub fn read_tsv(r: impl BufRead) -> Result<Self> {
        let mut by_query: HashMap<QueryId, Vec<TermLabel>> = HashMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Malformed { line: i + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 tab-separated fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad reward"));
            let label = TermLabel {
                qid: f[0].parse().map_err(|_| bad("bad qid"))?,
                term: f[1].parse().map_err(|_| bad("bad term index"))?,
                token: f[2].to_string(),
                r: num(f[3])?,
                r_prime: num(f[4])?,
                relevant: match f[5] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad("relevant must be 0 or 1")),
                },
            };
            let v = by_query.entry(label.qid).or_default();
            if label.term != v.len() {
                return Err(bad("term indices must be consecutive from 0"));
            }
            v.push(label);
        }
        Ok(LabelCache { by_query })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlConfig {
    /// Passes over the labelled pools; one optimizer step per pool.
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Selection threshold at evaluation time.
    pub threshold: f64,
}

impl Default for SlConfig {
    fn default() -> Self {
        SlConfig { epochs: 20, adam: AdamConfig::with_lr(1e-3), seed: 0, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlSummary {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

const BCE_EPS: f64 = 1e-12;

fn bce_graph(model: &PolicyModel, g: &mut Graph, d: &LabeledPool) -> Result<crate::neural::Var> {
    let enc = model.encode(g, &d.query.tokens, &d.pool)?;
    let p = model.score_terms(g, enc.query, enc.terms)?;
    let p = g.affine(p, 1.0 - 2.0 * BCE_EPS, BCE_EPS);
    let lp = g.log(p);
    let q = g.affine(p, -1.0, 1.0);
    let lq = g.log(q);
    let (pos, neg): (Vec<_>, Vec<_>) = (0..d.labels.len()).partition(|&i| d.labels[i].relevant);
    let a = g.pick(lp, pos.into_iter().map(|i| (i, 0)).collect());
    let b = g.pick(lq, neg.into_iter().map(|i| (i, 0)).collect());
    let s = g.add(a, b);
    Ok(g.affine(s, -1.0 / d.labels.len() as f64, 0.0))
}

/// Mean binary cross-entropy of the model over every labelled candidate.
pub fn classifier_loss(model: &PolicyModel, data: &[LabeledPool]) -> Result<f64> {
    let (sum, n) = data.iter().try_fold((0.0, 0usize), |(s, n), d| {
        let mut g = Graph::new();
        let l = bce_graph(model, &mut g, d)?;
        Ok::<_, Error>((s + g.scalar(l) * d.labels.len() as f64, n + d.labels.len()))
    })?;
    Ok(sum / n.max(1) as f64)
}

/// Fits the scorer to the labels with Adam on per-pool mean BCE.
pub fn train_classifier(model: &mut PolicyModel, data: &[LabeledPool], cfg: &SlConfig) -> Result<SlSummary> {
    if model.config().kind.is_sequential() {
        return Err(Error::invalid("supervised selection needs a per-term model"));
    }
    let pos = data.iter().flat_map(|d| &d.labels).filter(|l| l.relevant).count();
    let all: usize = data.iter().map(|d| d.labels.len()).sum();
    if pos == 0 || pos == all {
        return Err(Error::invalid("supervised training needs both positive and negative labels"));
    }
    for d in data {
        if d.labels.len() != d.pool.len() {
            return Err(Error::Dimension(format!("query {}: labels do not cover the pool", d.query.qid)));
        }
    }
    let initial_loss = classifier_loss(model, data)?;
    let clip = model.config().kind.is_recurrent().then_some(1.0);
    let mut opt = Adam::new(cfg.adam, &model.params, model.group(Group::Policy), clip);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let mut g = Graph::new();
            let loss = bce_graph(model, &mut g, &data[i])?;
            if !g.scalar(loss).is_finite() {
                return Err(Error::NonFinite(format!("classifier loss on query {}", data[i].query.qid)));
            }
            g.backward(loss, &mut model.params)?;
            opt.step(&mut model.params)?;
            steps += 1;
        }
    }
    let final_loss = classifier_loss(model, data)?;
    Ok(SlSummary { steps, initial_loss, final_loss })
}

fn score_query(
    q: &QueryRecord,
    expanded: &[String],
    index: &InvertedIndex,
    cut: Cutoffs,
) -> Result<QueryScores> {
    let ids = index.search(expanded, cut.depth()).ids();
    QueryScores::compute(q.qid, &ids, &q.relevant_set(), cut)
}

/// Evaluates `q0` plus every positively labelled term.
pub fn sl_oracle_eval(data: &[LabeledPool], index: &InvertedIndex, cut: Cutoffs) -> Result<EvalReport> {
    let rows = data
        .par_iter()
        .map(|d| {
            let q = expand_query(&d.query.tokens, d.positives().map(|l| l.token.clone()));
            score_query(&d.query, &q, index, cut)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::new("sl-oracle", cut, rows)
}

/// Evaluates `q0` plus the terms the classifier scores above the threshold,
/// over the same deterministic pools used for labelling.
pub fn sl_classifier_eval(
    model: &PolicyModel,
    queries: &[QueryRecord],
    index: &InvertedIndex,
    m: usize,
    k: usize,
    threshold: f64,
    cut: Cutoffs,
) -> Result<EvalReport> {
    let rows = queries
        .par_iter()
        .map(|q| {
            let pool = query_pool(q, index, m, k)?;
            let expanded = if pool.is_empty() {
                q.tokens.clone()
            } else {
                let probs = model.term_probabilities(&q.tokens, &pool)?;
                let sel = crate::rl::select_terms_test(&probs, threshold);
                expand_query(&q.tokens, sel.iter().map(|&i| pool.terms[i].token.clone()))
            };
            score_query(q, &expanded, index, cut)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::new(format!("sl-{}", model.config().kind), cut, rows)
}
