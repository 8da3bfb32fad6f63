use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{init_matrix, Encoder};
use super::tape::{Graph, Group, ParamId, ParamStore, Slot, Var};
use super::ModelConfig;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::prf::CandidatePool;

#[derive(Debug, Clone, PartialEq)]
struct Scorer {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Generator {
    wa: ParamId,
    wb: ParamId,
    wh: ParamId,
    bias: Option<ParamId>,
    start: ParamId,
    stop: ParamId,
}

/// Query and candidate encodings from one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `1 × d`
    pub query: Var,
    /// `n × d`, one row per candidate.
    pub terms: Var,
}

/// Recurrent state of the sequence generator.
#[derive(Debug, Clone, Copy)]
pub struct SeqState {
    pub h: Var,
    pub c: Var,
}

/// Every learnable tensor of a reformulator plus the fixed embedding table.
#[derive(Debug, Clone)]
pub struct PolicyModel {
    config: ModelConfig,
    table: Arc<EmbeddingTable>,
    pub params: ParamStore,
    oov: ParamId,
    query_encoder: Encoder,
    term_encoder: Encoder,
    scorer: Option<Scorer>,
    value: Scorer,
    generator: Option<Generator>,
}

impl PolicyModel {
    pub fn new(config: ModelConfig, table: Arc<EmbeddingTable>, seed: u64) -> Result<Self> {
        config.validate()?;
        if table.dim() != config.emb_dim {
            return Err(Error::Dimension(format!(
                "model expects {}-dim embeddings, table has {}",
                config.emb_dim,
                table.dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.d;
        let e = config.emb_dim;
        let oov = params.add("oov", Group::Policy, Array2::from_shape_vec((1, e), table.oov.clone()).expect("dim"));
        let span = 2 * config.radius + 1;
        let query_encoder = Encoder::new(&mut params, "query", &config.query_encoder, e, d, 1, &mut rng)?;
        let term_encoder = Encoder::new(&mut params, "term", &config.term_encoder, e, d, span, &mut rng)?;
        let scorer = (!config.kind.is_sequential()).then(|| Scorer {
            w: params.add("scorer.w", Group::Policy, init_matrix(&mut rng, 2 * d, d, 2 * d)),
            u: params.add("scorer.u", Group::Policy, init_matrix(&mut rng, d, 1, d)),
            b: params.add("scorer.b", Group::Policy, Array2::zeros((1, 1))),
        });
        let generator = config.kind.is_sequential().then(|| {
            let width = if config.gated { 4 * d } else { d };
            Generator {
                wa: params.add("seq.wa", Group::Policy, init_matrix(&mut rng, d, width, d)),
                wb: params.add("seq.wb", Group::Policy, init_matrix(&mut rng, d, width, d)),
                wh: params.add("seq.wh", Group::Policy, init_matrix(&mut rng, d, width, d)),
                bias: config.gated.then(|| params.add("seq.bias", Group::Policy, Array2::zeros((1, width)))),
                start: params.add("seq.start", Group::Policy, init_matrix(&mut rng, 1, d, d)),
                stop: params.add("seq.stop", Group::Policy, init_matrix(&mut rng, 1, d, d)),
            }
        });
        let value = Scorer {
            w: params.add("value.v", Group::Value, init_matrix(&mut rng, 2 * d, d, 2 * d)),
            u: params.add("value.s", Group::Value, init_matrix(&mut rng, d, 1, d)),
            b: params.add("value.b", Group::Value, Array2::zeros((1, 1))),
        };
        Ok(PolicyModel { config, table, params, oov, query_encoder, term_encoder, scorer, value, generator })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn table(&self) -> &Arc<EmbeddingTable> {
        &self.table
    }

    /// Embedding rows for `tokens`; `None` yields a zero row.
    pub fn embed(&self, g: &mut Graph, tokens: &[Option<&str>]) -> Var {
        let e = self.config.emb_dim;
        let mut fixed = Array2::zeros((tokens.len(), e));
        let slots = tokens
            .iter()
            .enumerate()
            .map(|(r, t)| match t.and_then(|t| self.table.row_index(t).map(|i| (t, i))) {
                Some((_, i)) => {
                    fixed.row_mut(r).assign(&self.table.row(i));
                    Slot::Fixed
                }
                None if t.is_some() => Slot::Oov,
                None => Slot::Pad,
            })
            .collect();
        let oov = g.param(&self.params, self.oov);
        g.lookup(fixed, oov, slots)
    }

    /// `φa(v)`, `1 × d`.
    pub fn encode_query(&self, g: &mut Graph, query: &[String]) -> Result<Var> {
        if query.is_empty() {
            return Err(Error::invalid("cannot encode an empty query"));
        }
        let toks: Vec<Option<&str>> = query.iter().map(|t| Some(t.as_str())).collect();
        let x = self.embed(g, &toks);
        self.query_encoder.encode_sequence(g, &self.params, x)
    }

    /// `φb(e_i)` for every candidate, `n × d`.
    pub fn encode_terms(&self, g: &mut Graph, pool: &CandidatePool) -> Result<Var> {
        if pool.is_empty() {
            return Err(Error::invalid("cannot encode an empty candidate pool"));
        }
        let span = 2 * self.config.radius + 1;
        let mut toks = Vec::with_capacity(pool.len() * span);
        for t in &pool.terms {
            if t.context.len() != span {
                return Err(Error::Dimension(format!("context of {} tokens, model expects {span}", t.context.len())));
            }
            toks.extend(t.context.iter().map(|c| c.as_deref()));
        }
        let x = self.embed(g, &toks);
        self.term_encoder.encode_centres(g, &self.params, x, pool.len(), span)
    }

    pub fn encode(&self, g: &mut Graph, query: &[String], pool: &CandidatePool) -> Result<Encoded> {
        Ok(Encoded { query: self.encode_query(g, query)?, terms: self.encode_terms(g, pool)? })
    }

    fn check_dims(&self, g: &Graph, phi_a: Var, phi_b: Var) -> Result<()> {
        let d = self.config.d;
        if g.shape(phi_a) != (1, d) || g.shape(phi_b).1 != d {
            return Err(Error::Dimension(format!(
                "expected query 1×{d} and terms n×{d}, got {:?} and {:?}",
                g.shape(phi_a),
                g.shape(phi_b)
            )));
        }
        Ok(())
    }

    /// `σ(Uᵀ tanh(W [φa ; φb]) + b)` per candidate, `n × 1`.
    pub fn score_terms(&self, g: &mut Graph, phi_a: Var, phi_b: Var) -> Result<Var> {
        self.check_dims(g, phi_a, phi_b)?;
        let s = self.scorer.as_ref().ok_or_else(|| Error::invalid("sequence models have no per-term scorer"))?;
        let n = g.shape(phi_b).0;
        let rep = g.gather(phi_a, vec![vec![Some(0)]; n]);
        let x = g.concat_cols(&[rep, phi_b]);
        let (w, u, b) = (g.param(&self.params, s.w), g.param(&self.params, s.u), g.param(&self.params, s.b));
        let h = g.matmul(x, w);
        let h = g.tanh(h);
        let z = g.matmul(h, u);
        let z = g.add(z, b);
        Ok(g.sigmoid(z))
    }

    /// Baseline reward `σ(Sᵀ tanh(V [φa ; mean φb]) + b_v)`, `1 × 1`. Inputs
    /// are detached, so only value parameters receive gradient.
    pub fn value_estimate(&self, g: &mut Graph, phi_a: Var, phi_b: Var) -> Result<Var> {
        self.check_dims(g, phi_a, phi_b)?;
        if g.shape(phi_b).0 == 0 {
            return Err(Error::invalid("value estimate of an empty pool"));
        }
        let a = g.detach(phi_a);
        let b = g.detach(phi_b);
        let mean = g.mean_rows(b);
        let x = g.concat_cols(&[a, mean]);
        let v = &self.value;
        let (w, s, bias) = (g.param(&self.params, v.w), g.param(&self.params, v.u), g.param(&self.params, v.b));
        let h = g.matmul(x, w);
        let h = g.tanh(h);
        let z = g.matmul(h, s);
        let z = g.add(z, bias);
        Ok(g.sigmoid(z))
    }

    fn generator(&self) -> Result<&Generator> {
        self.generator.as_ref().ok_or_else(|| Error::invalid("model has no sequence generator"))
    }

    /// Zero state and the learned start vector standing in for `φb(t⁰)`.
    pub fn seq_start(&self, g: &mut Graph) -> Result<(SeqState, Var)> {
        let gen = self.generator()?;
        let d = self.config.d;
        let h = g.constant(Array2::zeros((1, d)));
        let c = g.constant(Array2::zeros((1, d)));
        Ok((SeqState { h, c }, g.param(&self.params, gen.start)))
    }

    /// One generator update from `φa`, the previous term vector and state.
    pub fn seq_step(&self, g: &mut Graph, phi_a: Var, prev: Var, state: SeqState) -> Result<SeqState> {
        let gen = self.generator()?;
        let d = self.config.d;
        for v in [phi_a, prev, state.h, state.c] {
            if g.shape(v) != (1, d) {
                return Err(Error::Dimension(format!("generator input {:?}, expected 1×{d}", g.shape(v))));
            }
        }
        let (wa, wb, wh) = (g.param(&self.params, gen.wa), g.param(&self.params, gen.wb), g.param(&self.params, gen.wh));
        let za = g.matmul(phi_a, wa);
        let zb = g.matmul(prev, wb);
        let zh = g.matmul(state.h, wh);
        let z = g.add(za, zb);
        let mut z = g.add(z, zh);
        let Some(bias) = gen.bias else {
            let h = g.tanh(z);
            return Ok(SeqState { h, c: state.c });
        };
        let bias = g.param(&self.params, bias);
        z = g.add(z, bias);
        let i = g.slice_cols(z, 0, d);
        let f = g.slice_cols(z, d, 2 * d);
        let u = g.slice_cols(z, 2 * d, 3 * d);
        let o = g.slice_cols(z, 3 * d, 4 * d);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let u = g.tanh(u);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, u);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        Ok(SeqState { h, c })
    }

    /// Log-softmax of `φb(e_i)ᵀ h` over the candidates followed by STOP,
    /// `1 × (n + 1)`.
    pub fn seq_log_probs(&self, g: &mut Graph, h: Var, phi_b: Var) -> Result<Var> {
        let gen = self.generator()?;
        self.check_dims(g, h, phi_b)?;
        let stop = g.param(&self.params, gen.stop);
        let terms = g.matmul_t(h, phi_b);
        let end = g.matmul_t(h, stop);
        let logits = g.concat_cols(&[terms, end]);
        Ok(g.log_softmax_rows(logits))
    }

    /// Row `i` of `phi_b` as a `1 × d` input for the next generator step.
    pub fn term_vector(&self, g: &mut Graph, phi_b: Var, i: usize) -> Var {
        g.gather(phi_b, vec![vec![Some(i)]])
    }

    /// `P(t_i | q0)` for every candidate without keeping the graph.
    pub fn term_probabilities(&self, query: &[String], pool: &CandidatePool) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, query, pool)?;
        let p = self.score_terms(&mut g, enc.query, enc.terms)?;
        Ok(g.value(p).iter().copied().collect())
    }

    /// Parameter ids `grad_check`/optimizers should touch for `group`.
    pub fn group(&self, group: Group) -> Vec<ParamId> {
        self.params.group_ids(group)
    }

    /// Copies tensor values from `other`, which must share the layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Format(format!("{} tensors, expected {}", other.len(), self.params.len())));
        }
        for id in self.params.ids().collect::<Vec<_>>() {
            let src = other.find(self.params.name(id)).ok_or_else(|| {
                Error::Format(format!("missing tensor {}", self.params.name(id)))
            })?;
            if other.get(src).shape() != self.params.get(id).shape() {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    self.params.name(id),
                    other.get(src).shape(),
                    self.params.get(id).shape()
                )));
            }
            self.params.get_mut(id).value = other.value(src).clone();
        }
        Ok(())
    }
}
