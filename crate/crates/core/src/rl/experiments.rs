//! Seeded training experiments on constructed corpora.

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::bandit::{Bandit, LIFTING_TERM};
use crate::corpus::{Corpus, Document, QueryRecord};
use crate::embeddings::EmbeddingTable;
use crate::index::InvertedIndex;
use crate::neural::{Graph, Group, ModelConfig, PolicyModel};
use crate::prf::{pool_from_docs, CandidatePool, CandidateTerm, TermSource, CONTEXT_RADIUS};

fn bandit_setup(seed: u64) -> (Bandit, InvertedIndex, Arc<EmbeddingTable>) {
    let b = Bandit::new(5, 4).unwrap();
    let idx = InvertedIndex::build(&b.corpus).unwrap();
    let table = Arc::new(EmbeddingTable::random(&b.vocabulary(), 8, seed).unwrap());
    (b, idx, table)
}

fn bandit_config(kind: ModelKind, seed: u64, lr: f64, entropy: f64) -> RlConfig {
    let mut cfg = RlConfig::default();
    cfg.model = ModelSection { kind, d: 8, gated: true };
    cfg.pool = PoolSection { m: 50, k: 1 };
    cfg.train.seed = seed;
    cfg.train.entropy = entropy;
    cfg.train.max_len = 10;
    cfg.adam = AdamConfig::with_lr(lr);
    cfg
}

fn bandit_pool(b: &Bandit, idx: &InvertedIndex) -> CandidatePool {
    pool_from_docs(idx, &b.query.tokens, &[0], 50, 1, CONTEXT_RADIUS).unwrap()
}

fn target_prob(model: &PolicyModel, b: &Bandit, pool: &CandidatePool) -> f64 {
    let probs = model.term_probabilities(&b.query.tokens, pool).unwrap();
    let i = pool.terms.iter().position(|t| t.token == LIFTING_TERM).unwrap();
    probs[i]
}

/// Episodes until the lifting term's probability exceeds 0.9, if ever.
fn bandit_episodes(seed: u64, limit: usize) -> Option<usize> {
    let (b, idx, table) = bandit_setup(seed);
    let pool = bandit_pool(&b, &idx);
    let mut t = Trainer::from_config(bandit_config(ModelKind::Ff, seed, 1e-2, 1e-3), table, &idx).unwrap();
    for ep in 1..=limit {
        t.train_episode(&b.query).unwrap().unwrap();
        if ep % 10 == 0 && target_prob(&t.model, &b, &pool) > 0.9 {
            return Some(ep);
        }
    }
    None
}

#[test]
fn bandit_policy_finds_the_lifting_term() {
    let hits = (0..4).filter(|&s| bandit_episodes(s, 2000).is_some()).count();
    assert!(hits >= 3, "{hits}/4 seeds converged");
}

#[test]
fn value_tracks_a_constant_reward() {
    // Relevant = {0, 2}; document 2 shares nothing with any candidate, so
    // every episode retrieves exactly one of the two: R = 0.5 always.
    let docs = vec![
        Document { id: 0, title: vec![], body: vec!["q".into(), "a".into(), "b".into()] },
        Document { id: 1, title: vec![], body: vec!["c".into(), "d".into()] },
        Document { id: 2, title: vec![], body: vec!["x".into(), "y".into()] },
    ];
    let corpus = Corpus::new(docs).unwrap();
    let idx = InvertedIndex::build(&corpus).unwrap();
    let q = QueryRecord { qid: 0, tokens: vec!["q".into()], relevant: vec![0, 2] };
    let words: Vec<String> = ["q", "a", "b", "c", "d", "x", "y"].iter().map(|s| s.to_string()).collect();
    let table = Arc::new(EmbeddingTable::random(&words, 8, 3).unwrap());
    let mut t = Trainer::from_config(bandit_config(ModelKind::Ff, 3, 1e-3, 1e-3), table, &idx).unwrap();
    let mut last = None;
    for _ in 0..5000 {
        let tr = t.train_episode(&q).unwrap().unwrap();
        assert_eq!(tr.reward, 0.5);
        last = Some(tr.baseline);
    }
    assert!((last.unwrap() - 0.5).abs() < 0.05, "{last:?}");
}

fn probs_after_entropy_training(form: EntropyForm) -> Vec<f64> {
    let (b, idx, table) = bandit_setup(21);
    let pool = bandit_pool(&b, &idx);
    let mut cfg = bandit_config(ModelKind::Ff, 21, 1e-2, 10.0);
    cfg.train.entropy_form = form;
    let mut t = Trainer::from_config(cfg, table, &idx).unwrap();
    for _ in 0..2000 {
        t.train_episode(&b.query).unwrap();
    }
    t.model.term_probabilities(&b.query.tokens, &pool).unwrap()
}

/// With λ = 10 the regulariser dominates the reward. The `P log P` form has
/// its stationary point at `P = 1/e`; the full Bernoulli entropy at 1/2.
#[test]
fn dominant_entropy_pins_probabilities() {
    let plogp = probs_after_entropy_training(EntropyForm::PLogP);
    let e = (-1.0f64).exp();
    assert!(plogp.iter().all(|p| (p - e).abs() < 0.03), "{plogp:?}");
    let bern = probs_after_entropy_training(EntropyForm::Bernoulli);
    assert!(bern.iter().all(|p| (0.4..=0.6).contains(p)), "{bern:?}");
}

/// A single update on a frozen instance: fresh optimiser state, no entropy
/// term, and an episode whose reward beats the baseline.
#[test]
fn positive_advantage_raises_sampled_probabilities() {
    let (b, idx, table) = bandit_setup(5);
    let mut checked = 0;
    for seed in 0..40 {
        for kind in [ModelKind::Ff, ModelKind::Cnn, ModelKind::Rnn] {
            let mut t = Trainer::from_config(bandit_config(kind, seed, 1e-4, 0.0), table.clone(), &idx).unwrap();
            let before = t.model.clone();
            let tr = t.train_episode(&b.query).unwrap().unwrap();
            if tr.reward <= tr.baseline || tr.selected.is_empty() {
                continue;
            }
            let p0 = before.term_probabilities(&b.query.tokens, &tr.pool).unwrap();
            let p1 = t.model.term_probabilities(&b.query.tokens, &tr.pool).unwrap();
            for &i in &tr.selected {
                assert!(p1[i] > p0[i], "{kind} seed {seed} term {i}: {} -> {}", p0[i], p1[i]);
            }
            checked += 1;
        }
    }
    assert!(checked >= 10, "{checked}");
}

#[test]
fn value_step_leaves_policy_bitwise_unchanged() {
    let (b, idx, table) = bandit_setup(7);
    let pool = bandit_pool(&b, &idx);
    for kind in ModelKind::ALL {
        let mut t = Trainer::from_config(bandit_config(kind, 7, 1e-2, 1e-3), table.clone(), &idx).unwrap();
        // give Adam some policy momentum first
        for _ in 0..3 {
            t.train_episode(&b.query).unwrap();
        }
        let policy_before: Vec<_> =
            t.model.group(Group::Policy).iter().map(|id| t.model.params.value(*id).clone()).collect();
        let v0 = t.value_step(&b.query.tokens, &pool, 1.0).unwrap();
        let v1 = t.value_step(&b.query.tokens, &pool, 1.0).unwrap();
        assert!(v1 > v0);
        let policy_after: Vec<_> =
            t.model.group(Group::Policy).iter().map(|id| t.model.params.value(*id).clone()).collect();
        assert_eq!(policy_before, policy_after, "{kind}");
        if !kind.is_sequential() {
            let mut fresh = t.model.clone();
            fresh.params = t.model.params.clone();
            assert_eq!(
                fresh.term_probabilities(&b.query.tokens, &pool).unwrap(),
                t.model.term_probabilities(&b.query.tokens, &pool).unwrap()
            );
        }
    }
}

#[test]
fn training_is_reproducible() {
    let (b, idx, table) = bandit_setup(9);
    let run = |seed: u64| {
        let mut t = Trainer::from_config(bandit_config(ModelKind::Cnn, seed, 1e-3, 1e-3), table.clone(), &idx).unwrap();
        let mut cfg = t.config.clone();
        cfg.train.epochs = 3;
        t.config = cfg;
        let train = vec![b.query.clone(); 5];
        t.fit(&train, std::slice::from_ref(&b.query), None).unwrap();
        t.model.params.checksum()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

/// Closed-form expectation of the `C_a` gradient under independent Bernoulli
/// sampling, `Σ_t (E[R | t ∈ T] - b) ∇(-P_t)`, against a Monte Carlo average
/// of per-episode gradients.
#[test]
fn reinforce_gradient_matches_its_expectation() {
    let words: Vec<String> = ["q", "u", "v"].iter().map(|s| s.to_string()).collect();
    let table = Arc::new(EmbeddingTable::random(&words, 4, 11).unwrap());
    let model = PolicyModel::new(ModelConfig::new(ModelKind::Ff, 4, 4), table, 13).unwrap();
    let ctx = |w: &str| {
        let mut c = vec![None; 2 * CONTEXT_RADIUS + 1];
        c[CONTEXT_RADIUS] = Some(w.to_string());
        c
    };
    let pool = CandidatePool {
        terms: vec![
            CandidateTerm { token: "u".into(), context: ctx("u"), source: TermSource::Doc(0), index: 0 },
            CandidateTerm { token: "v".into(), context: ctx("v"), source: TermSource::Doc(0), index: 1 },
        ],
        m: 2,
        k: 1,
        radius: CONTEXT_RADIUS,
    };
    let q0 = vec!["q".to_string()];
    let reward = |sel: &[usize]| match sel {
        [] => 0.0,
        [0] => 1.0,
        [1] => 0.25,
        _ => 0.5,
    };
    let baseline = 0.3;
    let ids = model.group(Group::Policy);
    let flat = |store: &crate::neural::ParamStore| -> Vec<f64> {
        ids.iter()
            .flat_map(|id| store.get(*id).grad.clone().unwrap_or_else(|| Array2::zeros(store.get(*id).shape())))
            .collect()
    };
    let probs = model.term_probabilities(&q0, &pool).unwrap();

    // per-subset gradient of C_a
    let subsets: Vec<Vec<usize>> = vec![vec![], vec![0], vec![1], vec![0, 1]];
    let mut grads = Vec::new();
    for s in &subsets {
        let mut m = model.clone();
        let mut g = Graph::new();
        let enc = m.encode(&mut g, &q0, &pool).unwrap();
        let p = m.score_terms(&mut g, enc.query, enc.terms).unwrap();
        let lp = g.log(p);
        let picked = g.pick(lp, s.iter().map(|&i| (i, 0)).collect());
        let loss = g.affine(picked, -(reward(s) - baseline), 0.0);
        g.backward(loss, &mut m.params).unwrap();
        grads.push(flat(&m.params));
    }

    // closed form
    let mut expected = vec![0.0; grads[0].len()];
    for t in 0..2 {
        let other = 1 - t;
        let with_t = |o: bool| if o { vec![0, 1] } else { vec![t] };
        let e_r = probs[other] * reward(&with_t(true)) + (1.0 - probs[other]) * reward(&with_t(false));
        let mut m = model.clone();
        let mut g = Graph::new();
        let enc = m.encode(&mut g, &q0, &pool).unwrap();
        let p = m.score_terms(&mut g, enc.query, enc.terms).unwrap();
        let pt = g.pick(p, vec![(t, 0)]);
        let loss = g.affine(pt, -(e_r - baseline), 0.0);
        g.backward(loss, &mut m.params).unwrap();
        for (e, x) in expected.iter_mut().zip(flat(&m.params)) {
            *e += x;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        let s = select_terms_train(&probs, &mut rng);
        counts[subsets.iter().position(|x| *x == s).unwrap()] += 1;
    }
    let mc: Vec<f64> = (0..expected.len())
        .map(|j| (0..4).map(|s| counts[s] as f64 * grads[s][j]).sum::<f64>() / n as f64)
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = mc.iter().zip(&expected).map(|(a, b)| a - b).collect();
    assert!(norm(&diff) < 0.05 * norm(&expected), "{} vs {}", norm(&diff), norm(&expected));
}

fn seq_model(seed: u64, n_words: usize) -> (PolicyModel, CandidatePool, Vec<String>) {
    sharpened_seq_model(seed, n_words, 1.0)
}

/// Scales the generator weights by `sharpen` plus noise; 1 leaves the
/// initialisation untouched.
fn sharpened_seq_model(seed: u64, n_words: usize, sharpen: f64) -> (PolicyModel, CandidatePool, Vec<String>) {
    let words: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
    let table = Arc::new(EmbeddingTable::random(&words, 4, seed).unwrap());
    let mut cfg = ModelConfig::new(ModelKind::RnnSeq, 6, 4);
    cfg.gated = seed.is_multiple_of(2);
    let mut model = PolicyModel::new(cfg, table, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for name in ["seq.wa", "seq.wb", "seq.wh", "seq.stop"] {
        let id = model.params.find(name).unwrap();
        model.params.get_mut(id).value.mapv_inplace(|x| x * sharpen + rng.random_range(-0.5..0.5) * (sharpen - 1.0) / 2.0);
    }
    let toks: Vec<&str> = words.iter().map(String::as_str).collect();
    let terms = (0..toks.len())
        .map(|i| CandidateTerm {
            token: toks[i].to_string(),
            context: (i as isize - 4..=i as isize + 4)
                .map(|j| (0..toks.len() as isize).contains(&j).then(|| toks[j as usize].to_string()))
                .collect(),
            source: TermSource::Doc(0),
            index: i,
        })
        .collect();
    let pool = CandidatePool { terms, m: n_words, k: 1, radius: 4 };
    (model, pool, vec!["w0".to_string()])
}

#[test]
fn beam_one_is_greedy() {
    for seed in 0..5 {
        let (m, pool, q) = seq_model(seed, 4);
        let h = beam_search(&m, &q, &pool, 1, 6).unwrap();
        // stepwise argmax
        let mut g = Graph::new();
        let enc = m.encode(&mut g, &q, &pool).unwrap();
        let (mut st, mut prev) = m.seq_start(&mut g).unwrap();
        let mut seq = Vec::new();
        let mut total = 0.0;
        for _ in 0..6 {
            st = m.seq_step(&mut g, enc.query, prev, st).unwrap();
            let lp = m.seq_log_probs(&mut g, st.h, enc.terms).unwrap();
            let row: Vec<f64> = g.value(lp).row(0).to_vec();
            let (best, &x) = row.iter().enumerate().fold((0, &f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            total += x;
            if best == pool.len() {
                break;
            }
            seq.push(best);
            prev = m.term_vector(&mut g, enc.terms, best);
        }
        assert_eq!(h.terms, seq);
        assert_abs_diff_eq!(h.log_prob, total, epsilon = 1e-12);
    }
}

#[test]
fn forced_stop_gives_empty_sequence() {
    let (mut m, pool, q) = seq_model(3, 4);
    let mut g = Graph::new();
    let enc = m.encode(&mut g, &q, &pool).unwrap();
    let (st, prev) = m.seq_start(&mut g).unwrap();
    let h1 = m.seq_step(&mut g, enc.query, prev, st).unwrap();
    let dir = g.value(h1.h).clone();
    let id = m.params.find("seq.stop").unwrap();
    m.params.get_mut(id).value = dir * 1e4;
    let h = decode_sequence(&m, &q, &pool, 4, 5).unwrap();
    assert!(h.terms.is_empty() && h.stopped);
}

#[test]
fn beam_four_matches_enumeration_and_widths_are_monotone() {
    let mut agree = 0;
    let mut total = 0;
    for sharpen in [1.0, 3.0] {
        for seed in 0..40 {
            let n = 2 + (seed as usize % 4);
            let max_len = 1 + (seed as usize % 3);
            let (m, pool, q) = sharpened_seq_model(seed, n, sharpen);
            let all = enumerate_sequences(&m, &q, &pool, max_len).unwrap();
            let mass: f64 = all.iter().map(|h| h.log_prob.exp()).sum();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
            let got = decode_sequence(&m, &q, &pool, 4, max_len).unwrap();
            total += 1;
            if got.terms == all[0].terms {
                agree += 1;
            }
            let mut prev = f64::NEG_INFINITY;
            for b in 1..=6 {
                let lp = decode_sequence(&m, &q, &pool, b, max_len).unwrap().log_prob;
                assert!(lp >= prev);
                prev = lp;
            }
        }
    }
    assert_eq!(agree, total);
}

#[test]
fn rounds_follow_the_pipeline() {
    let (b, idx, table) = bandit_setup(1);
    let cfg = bandit_config(ModelKind::Ff, 1, 1e-2, 1e-3);
    let mut model = Trainer::from_config(cfg.clone(), table, &idx).unwrap().into_model();
    // a policy that selects nothing reproduces raw retrieval
    let bid = model.params.find("scorer.b").unwrap();
    model.params.get_mut(bid).value[[0, 0]] = -50.0;
    let raw = idx.search(&b.query.tokens, 40);
    for rounds in 1..=3 {
        let out = reformulate_rounds(&b.query.tokens, &idx, &model, &cfg, rounds, 40).unwrap();
        assert_eq!(out.result, raw);
        assert!(out.rounds.iter().all(|r| r.selected.is_empty() && r.query == b.query.tokens));
    }
    // select everything: round 2 pools the documents round 1 retrieved
    model.params.get_mut(bid).value[[0, 0]] = 50.0;
    let mut cfg2 = cfg.clone();
    cfg2.pool.k = 2;
    let one = reformulate_rounds(&b.query.tokens, &idx, &model, &cfg2, 1, 40).unwrap();
    let two = reformulate_rounds(&b.query.tokens, &idx, &model, &cfg2, 2, 40).unwrap();
    assert_eq!(one.rounds[0], two.rounds[0]);
    let expected = crate::prf::build_pool(&idx, &b.query.tokens, &one.result, cfg2.pool.m, 2).unwrap();
    assert_eq!(two.rounds[1].pool, expected);
    assert!(two.rounds[1].pool.terms.iter().any(|t| t.source == TermSource::Doc(1)));
}
