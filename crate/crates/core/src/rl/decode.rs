use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::neural::{Encoded, Graph, PolicyModel, SeqState, Var};
use crate::prf::CandidatePool;

/// A generated term sequence (pool indices) and its total log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub terms: Vec<usize>,
    pub log_prob: f64,
    /// Ended by choosing STOP rather than by reaching the length limit.
    pub stopped: bool,
}

#[derive(Clone)]
struct Live {
    hyp: Hypothesis,
    state: SeqState,
    prev: Var,
    done: bool,
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal)
}

struct Decoder<'a> {
    model: &'a PolicyModel,
    g: Graph,
    enc: Encoded,
    n: usize,
}

impl<'a> Decoder<'a> {
    fn new(model: &'a PolicyModel, query: &[String], pool: &CandidatePool) -> Result<Self> {
        if !model.config().kind.is_sequential() {
            return Err(Error::invalid("decoding needs a sequence model"));
        }
        let mut g = Graph::new();
        let enc = model.encode(&mut g, query, pool)?;
        Ok(Decoder { model, g, enc, n: pool.len() })
    }

    fn start(&mut self) -> Result<Live> {
        let (state, prev) = self.model.seq_start(&mut self.g)?;
        Ok(Live { hyp: Hypothesis { terms: vec![], log_prob: 0.0, stopped: false }, state, prev, done: false })
    }

    /// Next state and log-probabilities over candidates then STOP.
    fn expand(&mut self, live: &Live) -> Result<(SeqState, Vec<f64>)> {
        let state = self.model.seq_step(&mut self.g, self.enc.query, live.prev, live.state)?;
        let lp = self.model.seq_log_probs(&mut self.g, state.h, self.enc.terms)?;
        Ok((state, self.g.value(lp).row(0).to_vec()))
    }

    fn child(&mut self, parent: &Live, state: SeqState, choice: usize, lp: f64, max_len: usize) -> Live {
        let mut hyp = parent.hyp.clone();
        hyp.log_prob += lp;
        if choice == self.n {
            hyp.stopped = true;
            return Live { hyp, state, prev: parent.prev, done: true };
        }
        hyp.terms.push(choice);
        let done = hyp.terms.len() >= max_len;
        let prev = self.model.term_vector(&mut self.g, self.enc.terms, choice);
        Live { hyp, state, prev, done }
    }

    fn beam(&mut self, width: usize, max_len: usize) -> Result<Hypothesis> {
        let mut live = vec![self.start()?];
        let mut finished: Vec<Hypothesis> = Vec::new();
        while !live.is_empty() {
            let best_live = live.iter().map(|l| l.hyp.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if finished.first().is_some_and(|f| f.log_prob >= best_live) {
                break;
            }
            // (score, parent, choice)
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            let mut expanded = Vec::with_capacity(live.len());
            for (i, l) in live.iter().enumerate() {
                let (state, lp) = self.expand(l)?;
                cands.extend(lp.iter().enumerate().map(|(c, &x)| (l.hyp.log_prob + x, i, c)));
                expanded.push((state, lp));
            }
            cands.sort_by(|a, b| {
                b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
            });
            // The live beam is refilled to `width` from term expansions. Greedy
            // decoding only finishes on a top-ranked STOP; wider beams record
            // every STOP completion, since its score is already known.
            let mut next = Vec::with_capacity(width);
            for (rank, &(_, i, c)) in cands.iter().enumerate() {
                let stop = c == self.n;
                if next.len() == width && (width == 1 || !stop) {
                    continue;
                }
                if stop && width == 1 && rank >= width {
                    continue;
                }
                let (state, lp) = (expanded[i].0, expanded[i].1[c]);
                let child = self.child(&live[i], state, c, lp, max_len);
                if child.done {
                    finished.push(child.hyp);
                    finished.sort_by(by_score);
                } else {
                    next.push(child);
                }
            }
            live = next;
        }
        Ok(finished.swap_remove(0))
    }
}

/// Beam search of the given width; width 1 is greedy decoding. Search ends
/// once no live hypothesis can beat the best finished one.
pub fn beam_search(
    model: &PolicyModel,
    query: &[String],
    pool: &CandidatePool,
    beam: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    if beam == 0 || max_len == 0 {
        return Err(Error::invalid("beam and max_len must be at least 1"));
    }
    Decoder::new(model, query, pool)?.beam(beam, max_len)
}

/// Best hypothesis found by beam searches of every width up to `beam`; the
/// result never gets worse as `beam` grows.
pub fn decode_sequence(
    model: &PolicyModel,
    query: &[String],
    pool: &CandidatePool,
    beam: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    if beam == 0 || max_len == 0 {
        return Err(Error::invalid("beam and max_len must be at least 1"));
    }
    let mut dec = Decoder::new(model, query, pool)?;
    let mut best = dec.beam(1, max_len)?;
    for w in 2..=beam {
        let h = dec.beam(w, max_len)?;
        if h.log_prob > best.log_prob {
            best = h;
        }
    }
    Ok(best)
}

/// Every complete sequence of at most `max_len` terms, highest first.
pub fn enumerate_sequences(
    model: &PolicyModel,
    query: &[String],
    pool: &CandidatePool,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    let mut dec = Decoder::new(model, query, pool)?;
    let mut out = Vec::new();
    let mut stack = vec![dec.start()?];
    while let Some(l) = stack.pop() {
        if l.done {
            out.push(l.hyp);
            continue;
        }
        let (state, lp) = dec.expand(&l)?;
        for (c, &x) in lp.iter().enumerate() {
            stack.push(dec.child(&l, state, c, x, max_len));
        }
    }
    out.sort_by(by_score);
    Ok(out)
}
