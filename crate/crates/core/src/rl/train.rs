use std::io::Write;
use std::sync::Arc;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{expand_query, reformulate_rounds, select_terms_train, Adam, EntropyForm, RlConfig};
use crate::corpus::{QueryId, QueryRecord};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::metrics::recall_at_k;
use crate::neural::{Graph, Group, ModelConfig, PolicyModel, Var};
use crate::prf::{pool_from_docs, sample_feedback_doc, CandidatePool, CONTEXT_RADIUS};

/// Everything one training episode produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub qid: QueryId,
    pub pool: CandidatePool,
    /// Sampled pool indices (generation order for sequence models).
    pub selected: Vec<usize>,
    /// `q0` followed by the sampled terms.
    pub query: Vec<String>,
    pub reward: f64,
    pub baseline: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub c_h: f64,
}

/// One line of the training log, written after every validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_reward: f64,
    pub valid_reward: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub c_h: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub best_valid: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub episodes: u64,
    pub stopped_early: bool,
    pub log: Vec<LogRecord>,
}

/// Graph-side results of scoring one pool and sampling from it.
struct Sampled {
    selected: Vec<usize>,
    /// Σ log P over the sampled actions, 1×1.
    log_prob: Var,
    /// Σ P log P (or the Bernoulli form), 1×1.
    neg_entropy: Var,
}

#[derive(Default)]
struct Running {
    n: usize,
    reward: f64,
    c_a: f64,
    c_b: f64,
    c_h: f64,
}

impl Running {
    fn push(&mut self, t: &EpisodeTrace) {
        self.n += 1;
        self.reward += t.reward;
        self.c_a += t.c_a;
        self.c_b += t.c_b;
        self.c_h += t.c_h;
    }

    fn mean(&self, x: f64) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            x / self.n as f64
        }
    }
}

/// REINFORCE trainer: owns the model, both optimizers and the episode RNG.
pub struct Trainer<'a> {
    pub model: PolicyModel,
    pub config: RlConfig,
    index: &'a InvertedIndex,
    policy_opt: Adam,
    value_opt: Adam,
    rng: ChaCha8Rng,
    pending: usize,
    episodes: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(model: PolicyModel, index: &'a InvertedIndex, config: RlConfig) -> Result<Self> {
        config.validate()?;
        let clip = model.config().kind.is_recurrent().then_some(config.train.clip_norm);
        let policy_opt = Adam::new(config.adam, &model.params, model.group(Group::Policy), clip);
        let value_opt = Adam::new(config.adam, &model.params, model.group(Group::Value), clip);
        let rng = ChaCha8Rng::seed_from_u64(config.train.seed.wrapping_add(0x5eed));
        Ok(Trainer { model, config, index, policy_opt, value_opt, rng, pending: 0, episodes: 0 })
    }

    /// Builds a freshly initialised model from the config.
    pub fn from_config(config: RlConfig, table: Arc<EmbeddingTable>, index: &'a InvertedIndex) -> Result<Self> {
        let mut mc = ModelConfig::new(config.model.kind, config.model.d, table.dim());
        mc.gated = config.model.gated;
        let model = PolicyModel::new(mc, table, config.train.seed)?;
        Self::new(model, index, config)
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn into_model(self) -> PolicyModel {
        self.model
    }

    fn sample_terms(&mut self, g: &mut Graph, phi_a: Var, phi_b: Var) -> Result<Sampled> {
        let model = &self.model;
        if !model.config().kind.is_sequential() {
            let p = model.score_terms(g, phi_a, phi_b)?;
            let probs: Vec<f64> = g.value(p).iter().copied().collect();
            let selected = select_terms_train(&probs, &mut self.rng);
            let lp = g.log(p);
            let log_prob = g.pick(lp, selected.iter().map(|&i| (i, 0)).collect());
            let plogp = g.mul(p, lp);
            let mut neg_entropy = g.sum_all(plogp);
            if self.config.train.entropy_form == EntropyForm::Bernoulli {
                let q = g.affine(p, -1.0, 1.0);
                let lq = g.log(q);
                let qlogq = g.mul(q, lq);
                let s = g.sum_all(qlogq);
                neg_entropy = g.add(neg_entropy, s);
            }
            return Ok(Sampled { selected, log_prob, neg_entropy });
        }
        let n = g.shape(phi_b).0;
        let (mut state, mut prev) = model.seq_start(g)?;
        let mut selected = Vec::new();
        let mut picks = Vec::new();
        let mut ents = Vec::new();
        for _ in 0..self.config.train.max_len {
            state = model.seq_step(g, phi_a, prev, state)?;
            let lp = model.seq_log_probs(g, state.h, phi_b)?;
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut choice = n;
            for (i, x) in g.value(lp).iter().enumerate() {
                acc += x.exp();
                if u < acc {
                    choice = i;
                    break;
                }
            }
            picks.push(g.pick(lp, vec![(0, choice)]));
            let p = g.exp(lp);
            let plogp = g.mul(p, lp);
            ents.push(g.sum_all(plogp));
            if choice == n {
                break;
            }
            selected.push(choice);
            prev = model.term_vector(g, phi_b, choice);
        }
        let sum = |g: &mut Graph, xs: &[Var]| xs[1..].iter().fold(xs[0], |a, &b| g.add(a, b));
        let log_prob = sum(g, &picks);
        let neg_entropy = sum(g, &ents);
        Ok(Sampled { selected, log_prob, neg_entropy })
    }

    /// One episode: retrieve, sample a feedback document, build the pool,
    /// sample terms, retrieve again, score, and accumulate gradients. An
    /// optimizer step follows every `batch_size` episodes. Returns `None` when
    /// the query retrieves nothing.
    pub fn train_episode(&mut self, query: &QueryRecord) -> Result<Option<EpisodeTrace>> {
        let cfg = self.config.clone();
        let relevant = query.relevant_set();
        let d0 = self.index.search(&query.tokens, cfg.pool.k);
        if d0.is_empty() {
            warn!("query {} retrieves nothing; episode skipped", query.qid);
            return Ok(None);
        }
        let doc = sample_feedback_doc(&d0, cfg.pool.k, &mut self.rng)?;
        let pool = pool_from_docs(self.index, &query.tokens, &[doc], cfg.pool.m, cfg.pool.k, CONTEXT_RADIUS)?;

        let mut g = Graph::new();
        let enc = self.model.encode(&mut g, &query.tokens, &pool)?;
        let v = self.model.value_estimate(&mut g, enc.query, enc.terms)?;
        let baseline = g.scalar(v);
        let s = self.sample_terms(&mut g, enc.query, enc.terms)?;

        let expanded = expand_query(&query.tokens, s.selected.iter().map(|&i| pool.terms[i].token.clone()));
        let retrieved = self.index.search(&expanded, cfg.train.reward_k).ids();
        let reward = recall_at_k(&retrieved, &relevant, cfg.train.reward_k)?;

        // (R - R̄) enters as a constant
        let advantage = reward - baseline;
        let c_a = g.affine(s.log_prob, -advantage, 0.0);
        let lambda = cfg.train.entropy;
        let reg = g.affine(s.neg_entropy, lambda, 0.0);
        let diff = g.affine(v, -1.0, reward);
        let sq = g.mul(diff, diff);
        let c_b = g.affine(sq, cfg.train.value_alpha, 0.0);
        let policy = g.add(c_a, reg);
        let total = g.add(policy, c_b);
        let total = g.affine(total, 1.0 / cfg.train.batch_size as f64, 0.0);
        let trace = EpisodeTrace {
            qid: query.qid,
            selected: s.selected,
            query: expanded,
            reward,
            baseline,
            c_a: g.scalar(c_a),
            c_b: g.scalar(c_b),
            c_h: -g.scalar(reg),
            pool,
        };
        if !g.scalar(total).is_finite() {
            return Err(Error::NonFinite(format!("loss of query {}", query.qid)));
        }
        g.backward(total, &mut self.model.params)?;
        self.episodes += 1;
        self.pending += 1;
        if self.pending >= cfg.train.batch_size {
            self.apply()?;
        }
        Ok(Some(trace))
    }

    /// Runs both optimizers on whatever gradient has accumulated.
    pub fn apply(&mut self) -> Result<()> {
        if self.pending == 0 {
            return Ok(());
        }
        self.pending = 0;
        self.policy_opt.step(&mut self.model.params)?;
        self.value_opt.step(&mut self.model.params)
    }

    /// Pure value-network update on a fixed reward: only `C_b` is
    /// backpropagated and only the value optimizer steps.
    pub fn value_step(&mut self, query: &[String], pool: &CandidatePool, reward: f64) -> Result<f64> {
        let mut g = Graph::new();
        let enc = self.model.encode(&mut g, query, pool)?;
        let v = self.model.value_estimate(&mut g, enc.query, enc.terms)?;
        let diff = g.affine(v, -1.0, reward);
        let sq = g.mul(diff, diff);
        let c_b = g.affine(sq, self.config.train.value_alpha, 0.0);
        g.backward(c_b, &mut self.model.params)?;
        self.value_opt.step(&mut self.model.params)?;
        Ok(g.scalar(v))
    }

    /// Mean test-time reward over `queries`.
    pub fn evaluate(&self, queries: &[QueryRecord]) -> Result<f64> {
        mean_reward(&self.model, self.index, &self.config, queries)
    }

    /// Epoch loop with validation after every epoch (or every `eval_every`
    /// episodes), early stopping on validation reward, and restoration of
    /// the best parameters at the end.
    pub fn fit(
        &mut self,
        train: &[QueryRecord],
        valid: &[QueryRecord],
        mut log: Option<&mut dyn Write>,
    ) -> Result<TrainSummary> {
        if train.is_empty() || valid.is_empty() {
            return Err(Error::invalid("training needs non-empty train and validation sets"));
        }
        let cfg = self.config.train.clone();
        let mut best = self.evaluate(valid)?;
        let mut best_params = self.model.params.clone();
        let mut summary = TrainSummary {
            best_valid: best,
            best_epoch: 0,
            epochs_run: 0,
            episodes: 0,
            stopped_early: false,
            log: Vec::new(),
        };
        let mut stale = 0usize;
        let mut running = Running::default();
        let mut order: Vec<usize> = (0..train.len()).collect();
        'epochs: for epoch in 1..=cfg.epochs {
            order.shuffle(&mut self.rng);
            for &i in &order {
                if let Some(t) = self.train_episode(&train[i])? {
                    running.push(&t);
                }
                let due = cfg.eval_every > 0 && self.episodes.is_multiple_of(cfg.eval_every as u64);
                if due && self.checkpoint(epoch, valid, &mut running, &mut best, &mut best_params, &mut stale, &mut summary, &mut log)? {
                    break 'epochs;
                }
            }
            self.apply()?;
            summary.epochs_run = epoch;
            if cfg.eval_every == 0
                && self.checkpoint(epoch, valid, &mut running, &mut best, &mut best_params, &mut stale, &mut summary, &mut log)?
            {
                break;
            }
        }
        self.model.params = best_params;
        summary.best_valid = best;
        summary.episodes = self.episodes;
        Ok(summary)
    }

    /// Validates, logs, tracks the best parameters; returns whether to stop.
    #[allow(clippy::too_many_arguments)]
    fn checkpoint(
        &mut self,
        epoch: usize,
        valid: &[QueryRecord],
        running: &mut Running,
        best: &mut f64,
        best_params: &mut crate::neural::ParamStore,
        stale: &mut usize,
        summary: &mut TrainSummary,
        log: &mut Option<&mut dyn Write>,
    ) -> Result<bool> {
        let score = self.evaluate(valid)?;
        let improved = score > *best;
        if improved {
            *best = score;
            *best_params = self.model.params.clone();
            summary.best_epoch = epoch;
            *stale = 0;
        } else {
            *stale += 1;
        }
        let rec = LogRecord {
            epoch,
            step: self.episodes,
            train_reward: running.mean(running.reward),
            valid_reward: score,
            c_a: running.mean(running.c_a),
            c_b: running.mean(running.c_b),
            c_h: running.mean(running.c_h),
            best: improved,
        };
        info!(
            "epoch {epoch} step {} train R {:.4} valid R {:.4}{}",
            rec.step,
            rec.train_reward,
            score,
            if improved { " *" } else { "" }
        );
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut **w, &rec)?;
            writeln!(w)?;
        }
        summary.log.push(rec);
        *running = Running::default();
        if *stale >= self.config.train.patience {
            debug!("no validation improvement for {stale} evaluations; stopping");
            summary.stopped_early = true;
            return Ok(true);
        }
        Ok(false)
    }
}

/// Mean reward (recall at the reward cutoff) of test-time reformulation.
pub(crate) fn mean_reward(
    model: &PolicyModel,
    index: &InvertedIndex,
    cfg: &RlConfig,
    queries: &[QueryRecord],
) -> Result<f64> {
    let k = cfg.train.reward_k;
    let rewards: Vec<f64> = queries
        .par_iter()
        .map(|q| {
            let out = reformulate_rounds(&q.tokens, index, model, cfg, cfg.train.rounds, k)?;
            recall_at_k(&out.result.ids(), &q.relevant_set(), k)
        })
        .collect::<Result<_>>()?;
    Ok(rewards.iter().sum::<f64>() / rewards.len().max(1) as f64)
}
