//! Central finite differences over every trainable tensor of every model.

use ndarray::Array2;
use qreform::neural::{grad_check_report, Graph, Group, ModelKind, ParamStore, PolicyModel, Var};
use qreform::prf::CandidatePool;
use qreform::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::support;
use crate::Verdict;

const TOL: f64 = 1e-5;
const STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
enum Loss {
    /// Advantage-weighted log-probability plus the `P log P` regulariser.
    Reinforce,
    /// Same with the full Bernoulli entropy.
    ReinforceBernoulli,
    /// Binary cross-entropy of the term classifier.
    Classifier,
    /// Squared error of the value estimate.
    Value,
}

fn forward(m: &PolicyModel, q: &[String], pool: &CandidatePool, loss: Loss) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let enc = m.encode(&mut g, q, pool)?;
    let n = pool.len();
    let root = match loss {
        Loss::Value => {
            let v = m.value_estimate(&mut g, enc.query, enc.terms)?;
            let d = g.affine(v, -1.0, 0.7);
            let sq = g.mul(d, d);
            g.affine(sq, 0.3, 0.0)
        }
        _ if m.config().kind.is_sequential() => {
            // two terms then STOP, with the per-step entropy terms
            let (mut st, mut prev) = m.seq_start(&mut g)?;
            let mut acc = Vec::new();
            for (step, choice) in [0, n - 1, n].into_iter().enumerate() {
                st = m.seq_step(&mut g, enc.query, prev, st)?;
                let lp = m.seq_log_probs(&mut g, st.h, enc.terms)?;
                acc.push(g.pick(lp, vec![(0, choice)]));
                let p = g.exp(lp);
                let plogp = g.mul(p, lp);
                let s = g.sum_all(plogp);
                acc.push(g.affine(s, 0.2, 0.0));
                if step < 2 {
                    prev = m.term_vector(&mut g, enc.terms, choice);
                }
            }
            let total = acc[1..].iter().fold(acc[0], |a, &b| g.add(a, b));
            g.affine(total, -0.6, 0.0)
        }
        Loss::Classifier => {
            let p = m.score_terms(&mut g, enc.query, enc.terms)?;
            let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            let lp = g.log(p);
            let q1 = g.affine(p, -1.0, 1.0);
            let lq = g.log(q1);
            let y = g.constant(Array2::from_shape_vec((n, 1), labels.clone()).unwrap());
            let ny = g.constant(Array2::from_shape_vec((n, 1), labels.iter().map(|l| 1.0 - l).collect()).unwrap());
            let a = g.mul(lp, y);
            let b = g.mul(lq, ny);
            let s = g.add(a, b);
            let s = g.sum_all(s);
            g.affine(s, -1.0 / n as f64, 0.0)
        }
        Loss::Reinforce | Loss::ReinforceBernoulli => {
            let p = m.score_terms(&mut g, enc.query, enc.terms)?;
            let lp = g.log(p);
            let picks: Vec<(usize, usize)> = (0..n).step_by(2).map(|i| (i, 0)).collect();
            let logp = g.pick(lp, picks);
            let c_a = g.affine(logp, -0.45, 0.0);
            let plogp = g.mul(p, lp);
            let mut neg_h = g.sum_all(plogp);
            if matches!(loss, Loss::ReinforceBernoulli) {
                let q1 = g.affine(p, -1.0, 1.0);
                let lq = g.log(q1);
                let qlogq = g.mul(q1, lq);
                let s = g.sum_all(qlogq);
                neg_h = g.add(neg_h, s);
            }
            let reg = g.affine(neg_h, 0.3, 0.0);
            g.add(c_a, reg)
        }
    };
    Ok((g, root))
}

pub fn run() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut worst_entry: f64 = 0.0;
    let mut checked = 0usize;
    let mut failures = Vec::new();
    let cases = [
        (ModelKind::Ff, true, 4),
        (ModelKind::Ff, true, 16),
        (ModelKind::Cnn, true, 4),
        (ModelKind::Cnn, true, 8),
        (ModelKind::Rnn, true, 4),
        (ModelKind::Rnn, true, 8),
        (ModelKind::RnnSeq, true, 4),
        (ModelKind::RnnSeq, false, 6),
    ];
    for (kind, gated, d) in cases {
        let m = support::initialized_model(&mut rng, kind, d, 3, gated);
        let q = support::query(&mut rng, 3);
        let pool = support::pool(&mut rng, 8 - q.len());
        let policy: &[Loss] = if kind.is_sequential() {
            &[Loss::Reinforce]
        } else {
            &[Loss::Reinforce, Loss::ReinforceBernoulli, Loss::Classifier]
        };
        let plan = policy.iter().map(|l| (*l, Group::Policy)).chain([(Loss::Value, Group::Value)]);
        for (loss, group) in plan {
            let mut store = m.params.clone();
            let ids = m.group(group);
            checked += ids.iter().map(|&id| store.value(id).len()).sum::<usize>();
            let shadow = m.clone();
            let err = grad_check_report(&mut store, &ids, STEP, |st: &ParamStore| {
                let mut mm = shadow.clone();
                mm.params = st.clone();
                forward(&mm, &q, &pool, loss)
            });
            match err {
                Ok(rep) => {
                    for (name, e) in rep.tensors.iter().filter(|t| t.1 >= TOL) {
                        failures.push(format!("{kind}/d{d}/{loss:?}/{name} {e:.1e}"));
                    }
                    worst = worst.max(rep.max_tensor());
                    worst_entry = worst_entry.max(rep.max_entry);
                }
                Err(e) => failures.push(format!("{kind}/d{d}/{loss:?}: {e}")),
            }
        }
    }
    let detail = format!(
        "max relative error per tensor {worst:.2e} (largest single-entry ratio {worst_entry:.1e}) over {checked} parameter entries"
    );
    if failures.is_empty() {
        Verdict::new(true, detail)
    } else {
        Verdict::new(false, format!("{detail}; failing: {}", failures.join(", ")))
    }
}
