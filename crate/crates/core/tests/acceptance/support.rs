use std::sync::Arc;

use ndarray::Array2;
use qreform::embeddings::EmbeddingTable;
use qreform::neural::{ModelConfig, ModelKind, PolicyModel};
use qreform::prf::{CandidatePool, CandidateTerm, TermSource, CONTEXT_RADIUS};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 10] = ["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9"];
/// Tokens outside every table, so the OOV vector is exercised.
pub const UNKNOWN: [&str; 2] = ["zz0", "zz1"];

pub fn table(rng: &mut ChaCha8Rng, dim: usize) -> Arc<EmbeddingTable> {
    let rows = WORDS.iter().map(|w| (w.to_string(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
    Arc::new(EmbeddingTable::from_rows(rows, rng.random()).unwrap())
}

fn token(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.15) {
        UNKNOWN.choose(rng).unwrap().to_string()
    } else {
        WORDS.choose(rng).unwrap().to_string()
    }
}

pub fn query(rng: &mut ChaCha8Rng, max: usize) -> Vec<String> {
    (0..rng.random_range(1..=max)).map(|_| token(rng)).collect()
}

/// A pool of `n` candidates with random tokens and partially padded contexts.
pub fn pool(rng: &mut ChaCha8Rng, n: usize) -> CandidatePool {
    let width = 2 * CONTEXT_RADIUS + 1;
    let terms = (0..n)
        .map(|i| {
            let tok = token(rng);
            let context = (0..width)
                .map(|j| {
                    if j == CONTEXT_RADIUS {
                        Some(tok.clone())
                    } else if rng.random_bool(0.2) {
                        None
                    } else {
                        Some(token(rng))
                    }
                })
                .collect();
            CandidateTerm { token: tok, context, source: TermSource::Doc(0), index: i }
        })
        .collect();
    CandidatePool { terms, m: n, k: 1, radius: CONTEXT_RADIUS }
}

/// A model whose every parameter, biases included, is drawn uniformly.
pub fn model(rng: &mut ChaCha8Rng, kind: ModelKind, d: usize, e: usize, gated: bool) -> PolicyModel {
    let mut cfg = ModelConfig::new(kind, d, e);
    cfg.gated = gated;
    let mut m = PolicyModel::new(cfg, table(rng, e), rng.random()).unwrap();
    for id in m.params.ids().collect::<Vec<_>>() {
        m.params.get_mut(id).value.mapv_inplace(|_| rng.random_range(-0.8..0.8));
    }
    m
}

/// A model at its own initialization, with biases drawn uniformly so that
/// no bias gradient sits at a symmetric point.
pub fn initialized_model(rng: &mut ChaCha8Rng, kind: ModelKind, d: usize, e: usize, gated: bool) -> PolicyModel {
    let mut cfg = ModelConfig::new(kind, d, e);
    cfg.gated = gated;
    let mut m = PolicyModel::new(cfg, table(rng, e), rng.random()).unwrap();
    for id in m.params.ids().collect::<Vec<_>>() {
        let name = m.params.name(id);
        if name.ends_with(".b") || name.ends_with("bias") {
            m.params.get_mut(id).value.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
    m
}

pub fn param(m: &PolicyModel, name: &str) -> Array2<f64> {
    m.params.value(m.params.find(name).unwrap()).clone()
}

pub fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `σ(u · tanh(W [a; b]) + bias)` with `W`, `u`, `bias` looked up by name.
pub fn two_layer(m: &PolicyModel, names: [&str; 3], a: &[f64], b: &[f64]) -> f64 {
    let w = param(m, names[0]);
    let u = param(m, names[1]);
    let bias = param(m, names[2])[[0, 0]];
    let x: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut z = bias;
    for j in 0..w.ncols() {
        let mut h = 0.0;
        for (k, xk) in x.iter().enumerate() {
            h += w[[k, j]] * xk;
        }
        z += u[[j, 0]] * h.tanh();
    }
    sigmoid(z)
}

/// Tracks the largest deviation and the number of instances per formula.
#[derive(Default)]
pub struct Tally {
    rows: Vec<(&'static str, usize, f64)>,
}

impl Tally {
    pub fn record(&mut self, name: &'static str, dev: f64) {
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        match self.rows.iter_mut().find(|r| r.0 == name) {
            Some(r) => {
                r.1 += 1;
                r.2 = r.2.max(dev);
            }
            None => self.rows.push((name, 1, dev)),
        }
    }

    pub fn close(&mut self, name: &'static str, got: f64, want: f64) {
        self.record(name, (got - want).abs());
    }

    pub fn passes(&self, tol: f64, min_instances: usize) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.1 >= min_instances && r.2 <= tol)
    }

    pub fn summary(&self) -> String {
        self.rows.iter().map(|(n, c, d)| format!("{n} {d:.1e}/{c}")).collect::<Vec<_>>().join(", ")
    }
}
