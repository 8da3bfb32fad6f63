//! Every scoring formula against a literal scalar transcription.

use std::collections::{HashMap, HashSet};

use qreform::corpus::{Corpus, SyntheticConfig, SyntheticDataset};
use qreform::index::InvertedIndex;
use qreform::metrics::{average_precision_at_k, map_at_k, precision_at_k, recall_at_k};
use qreform::neural::{Graph, ModelKind};
use qreform::prf::{prf_rm, relevance_model};
use qreform::rl::{entropy_reg, reinforce_loss, value_loss, AdamConfig, EntropyForm, RlConfig, Trainer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::support::{self, rows, Tally};
use crate::Verdict;

const TOL: f64 = 1e-10;
const INSTANCES: usize = 100;

pub fn run() -> Verdict {
    let mut t = Tally::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    scorers(&mut rng, &mut t);
    sequence(&mut rng, &mut t);
    losses(&mut t);
    language_models(&mut rng, &mut t);
    metrics(&mut rng, &mut t);
    Verdict::new(t.passes(TOL, INSTANCES), t.summary())
}

fn scorers(rng: &mut ChaCha8Rng, t: &mut Tally) {
    let kinds = [ModelKind::Ff, ModelKind::Cnn, ModelKind::Rnn];
    for i in 0..120 {
        let d = rng.random_range(2..=8);
        let e = rng.random_range(2..=6);
        let m = support::model(rng, kinds[i % 3], d, e, true);
        let q = support::query(rng, 4);
        let n = rng.random_range(1..=8);
        let pool = support::pool(rng, n);
        let mut g = Graph::new();
        let enc = m.encode(&mut g, &q, &pool).unwrap();
        let a = g.value(enc.query).row(0).to_vec();
        let terms = rows(g.value(enc.terms));
        let p = m.score_terms(&mut g, enc.query, enc.terms).unwrap();
        let v = m.value_estimate(&mut g, enc.query, enc.terms).unwrap();
        let mut worst: f64 = 0.0;
        for (j, row) in terms.iter().enumerate() {
            let want = support::two_layer(&m, ["scorer.w", "scorer.u", "scorer.b"], &a, row);
            worst = worst.max((g.value(p)[[j, 0]] - want).abs());
        }
        t.record("score_terms", worst);
        let mean: Vec<f64> = (0..d).map(|j| terms.iter().map(|r| r[j]).sum::<f64>() / terms.len() as f64).collect();
        t.close("value_estimate", g.scalar(v), support::two_layer(&m, ["value.v", "value.s", "value.b"], &a, &mean));
    }
}

/// Softmax over `[terms · h ; stop · h]`, the last entry being STOP.
fn seq_oracle(h: &[f64], terms: &[Vec<f64>], stop: &[f64]) -> Vec<f64> {
    let dot = |x: &[f64]| x.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    let mut logits: Vec<f64> = terms.iter().map(|r| dot(r)).collect();
    logits.push(dot(stop));
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    logits.iter().map(|l| (l - mx).exp() / z).collect()
}

fn sequence(rng: &mut ChaCha8Rng, t: &mut Tally) {
    for i in 0..120 {
        let d = rng.random_range(2..=8);
        let e = rng.random_range(2..=6);
        let m = support::model(rng, ModelKind::RnnSeq, d, e, i % 2 == 0);
        let q = support::query(rng, 4);
        let n = rng.random_range(1..=8);
        let pool = support::pool(rng, n);
        let n = pool.len();
        let stop = support::param(&m, "seq.stop").row(0).to_vec();
        let mut g = Graph::new();
        let enc = m.encode(&mut g, &q, &pool).unwrap();
        let terms = rows(g.value(enc.terms));
        let (st, start) = m.seq_start(&mut g).unwrap();
        let s1 = m.seq_step(&mut g, enc.query, start, st).unwrap();
        let pick = rng.random_range(0..n);
        let prev = m.term_vector(&mut g, enc.terms, pick);
        let s2 = m.seq_step(&mut g, enc.query, prev, s1).unwrap();
        let mut worst: f64 = 0.0;
        for s in [s1, s2] {
            let lp = m.seq_log_probs(&mut g, s.h, enc.terms).unwrap();
            let h = g.value(s.h).row(0).to_vec();
            let want = seq_oracle(&h, &terms, &stop);
            for (j, w) in want.iter().enumerate() {
                worst = worst.max((g.value(lp)[[0, j]].exp() - w).abs());
            }
        }
        t.record("seq_term_probs", worst);
    }
}

fn small_benchmark(seed: u64) -> SyntheticDataset {
    let cfg = SyntheticConfig { seed, n_topics: 4, n_docs: 40, n_queries: 24, ..Default::default() };
    SyntheticDataset::generate(&cfg).unwrap()
}

/// Losses reported by live training episodes, recomputed from the
/// pre-episode model's probabilities and baseline.
fn losses(t: &mut Tally) {
    let ds = small_benchmark(5);
    let idx = InvertedIndex::build(&ds.corpus).unwrap();
    let table = std::sync::Arc::new(ds.embeddings(6, 0.5, 0.0, 1).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let kinds = [ModelKind::Ff, ModelKind::Cnn, ModelKind::Rnn];
    for (i, kind) in kinds.iter().enumerate() {
        for form in [EntropyForm::PLogP, EntropyForm::Bernoulli] {
            let mut cfg = RlConfig::default();
            cfg.model.kind = *kind;
            cfg.model.d = 6;
            cfg.pool.m = 6;
            cfg.pool.k = 3;
            cfg.train.reward_k = 10;
            cfg.train.seed = i as u64;
            cfg.train.entropy = rng.random_range(1e-3..0.5);
            cfg.train.entropy_form = form;
            cfg.train.value_alpha = rng.random_range(0.05..1.0);
            cfg.adam = AdamConfig::with_lr(1e-2);
            let mut tr = Trainer::from_config(cfg.clone(), table.clone(), &idx).unwrap();
            for q in ds.split.train.iter().cycle().take(40) {
                let before = tr.model.clone();
                let Some(trace) = tr.train_episode(q).unwrap() else { continue };
                let probs = before.term_probabilities(&q.tokens, &trace.pool).unwrap();
                let mut g = Graph::new();
                let enc = before.encode(&mut g, &q.tokens, &trace.pool).unwrap();
                let a = g.value(enc.query).row(0).to_vec();
                let terms = rows(g.value(enc.terms));
                let dd = a.len();
                let mean: Vec<f64> =
                    (0..dd).map(|j| terms.iter().map(|r| r[j]).sum::<f64>() / terms.len() as f64).collect();
                let b = support::two_layer(&before, ["value.v", "value.s", "value.b"], &a, &mean);
                let adv = trace.reward - b;
                let c_a = adv * trace.selected.iter().map(|&j| -probs[j].ln()).sum::<f64>();
                let lam = cfg.train.entropy;
                let c_h = match form {
                    EntropyForm::PLogP => -lam * probs.iter().map(|p| p * p.ln()).sum::<f64>(),
                    EntropyForm::Bernoulli => {
                        -lam * probs.iter().map(|p| p * p.ln() + (1.0 - p) * (1.0 - p).ln()).sum::<f64>()
                    }
                };
                let c_b = cfg.train.value_alpha * adv * adv;
                t.close("C_a", trace.c_a, c_a);
                t.close("C_b", trace.c_b, c_b);
                t.close("C_H", trace.c_h, c_h);
                t.close("baseline", trace.baseline, b);
                let sel: Vec<f64> = trace.selected.iter().map(|&j| probs[j]).collect();
                t.close("C_a fn", reinforce_loss(trace.reward, b, &sel), c_a);
                t.close("C_b fn", value_loss(trace.reward, b, cfg.train.value_alpha).unwrap(), c_b);
                if form == EntropyForm::PLogP {
                    t.close("C_H fn", entropy_reg(&probs, lam), c_h);
                }
            }
        }
    }
}

struct Counts {
    tf: Vec<HashMap<String, f64>>,
    len: Vec<f64>,
    cf: HashMap<String, f64>,
    total: f64,
}

impl Counts {
    fn new(c: &Corpus) -> Self {
        let mut tf = Vec::new();
        let mut len = Vec::new();
        let mut cf: HashMap<String, f64> = HashMap::new();
        for d in c.docs() {
            let mut m: HashMap<String, f64> = HashMap::new();
            for w in d.tokens() {
                *m.entry(w.clone()).or_default() += 1.0;
                *cf.entry(w.clone()).or_default() += 1.0;
            }
            len.push(d.len() as f64);
            tf.push(m);
        }
        let total = len.iter().sum();
        Counts { tf, len, cf, total }
    }

    fn p(&self, w: &str, d: usize, mu: f64) -> f64 {
        let tf = self.tf[d].get(w).copied().unwrap_or(0.0);
        let pc = self.cf.get(w).copied().unwrap_or(0.0) / self.total;
        (tf + mu * pc) / (self.len[d] + mu)
    }
}

fn language_models(rng: &mut ChaCha8Rng, t: &mut Tally) {
    let ds = small_benchmark(9);
    let idx = InvertedIndex::build(&ds.corpus).unwrap();
    let counts = Counts::new(&ds.corpus);
    // doc ids are dense from zero in generated corpora
    let slot = |id: u32| ds.corpus.docs().iter().position(|d| d.id == id).unwrap();
    let vocab: Vec<String> = counts.cf.keys().cloned().collect();
    for _ in 0..120 {
        let d = rng.random_range(0..ds.corpus.len());
        let id = ds.corpus.docs()[d].id;
        let w = if rng.random_bool(0.1) { "unseen".to_string() } else { vocab[rng.random_range(0..vocab.len())].clone() };
        let mu = rng.random_range(1.0..3000.0);
        t.close("lm_prob", idx.lm_prob(&w, id, mu).unwrap(), counts.p(&w, d, mu));
    }
    let queries: Vec<_> = ds.split.train.iter().chain(&ds.split.valid).chain(&ds.split.test).collect();
    let mut done = 0;
    for i in 0.. {
        if done == 120 {
            break;
        }
        let q = &queries[i % queries.len()].tokens;
        let k = rng.random_range(1..=5);
        let lambda = rng.random_range(0.0..=1.0);
        let mu = rng.random_range(10.0..3000.0);
        let docs = idx.search(q, k).ids();
        if docs.is_empty() {
            continue;
        }
        done += 1;
        let got = relevance_model(q, &idx, &docs, lambda, mu).unwrap();
        let slots: Vec<usize> = docs.iter().map(|&id| slot(id)).collect();
        let oracle = |w: &str| {
            let pq = q.iter().filter(|x| *x == w).count() as f64 / q.len() as f64;
            let fb: f64 = slots
                .iter()
                .map(|&s| counts.p(w, s, mu) * q.iter().map(|x| counts.p(x, s, mu)).product::<f64>())
                .sum::<f64>()
                / slots.len() as f64;
            (1.0 - lambda) * pq + lambda * fb
        };
        let mut expected: HashSet<String> = q.iter().cloned().collect();
        for &s in &slots {
            expected.extend(ds.corpus.docs()[s].tokens().cloned());
        }
        let mut worst: f64 = if got.len() == expected.len() { 0.0 } else { f64::INFINITY };
        for (w, score) in &got {
            let want = oracle(w);
            worst = worst.max((score - want).abs() / want.abs().max(f64::MIN_POSITIVE));
        }
        t.record("relevance_model", worst);
        // prf_rm appends the n best terms: none left out may beat one taken in
        let n = rng.random_range(1..=8);
        let out = prf_rm(q, &idx, n, k, lambda, mu).unwrap();
        let taken: HashSet<&String> = out[q.len()..].iter().collect();
        let min_in = taken.iter().map(|w| oracle(w)).fold(f64::INFINITY, f64::min);
        let max_out = expected.iter().filter(|w| !taken.contains(w)).map(|w| oracle(w)).fold(0.0, f64::max);
        let ok = out[..q.len()] == q[..] && out.len() == q.len() + n.min(expected.len());
        t.record("prf_rm", if ok && min_in >= max_out * (1.0 - TOL) { 0.0 } else { f64::INFINITY });
    }
}

fn metrics(rng: &mut ChaCha8Rng, t: &mut Tally) {
    let mut aps = Vec::new();
    let mut lits = Vec::new();
    for _ in 0..200 {
        let mut ids: Vec<u32> = (0..30).collect();
        ids.shuffle(rng);
        ids.truncate(rng.random_range(0..=30));
        let extra = rng.random_range(0..40);
        let rel: HashSet<u32> = (0..30).filter(|_| rng.random_bool(0.2)).chain([extra]).collect();
        let k = rng.random_range(1..=20);
        let top = &ids[..ids.len().min(k)];
        let hits = top.iter().filter(|d| rel.contains(d)).count() as f64;
        t.close("recall", recall_at_k(&ids, &rel, k).unwrap(), hits / rel.len() as f64);
        let p = if top.is_empty() { 0.0 } else { hits / top.len() as f64 };
        t.close("precision", precision_at_k(&ids, &rel, k).unwrap(), p);
        let mut ap = 0.0;
        for j in 0..top.len() {
            if rel.contains(&top[j]) {
                let found = top[..=j].iter().filter(|d| rel.contains(d)).count() as f64;
                ap += found / (j + 1) as f64;
            }
        }
        ap /= rel.len() as f64;
        let got = average_precision_at_k(&ids, &rel, k).unwrap();
        t.close("average_precision", got, ap);
        aps.push(got);
        lits.push(ap);
        if aps.len() == 2 {
            t.close("map", map_at_k(&aps).unwrap(), lits.iter().sum::<f64>() / lits.len() as f64);
            aps.clear();
            lits.clear();
        }
    }
}
