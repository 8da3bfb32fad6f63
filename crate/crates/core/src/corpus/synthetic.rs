//! Topic-mixture corpora with controllable query/document vocabulary mismatch.
//!
//! Every topic owns a document vocabulary and a query vocabulary. A fraction
//! `1 - mismatch` of the query vocabulary is drawn from the topic's document
//! vocabulary; the remainder are query-only words that never occur in any
//! document. Neighbouring topics (on a ring) share a few "link" words, which
//! makes short queries ambiguous. A query's relevant set is every document of
//! its topic.

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetSplit, DocId, Document, QueryRecord};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_topics: usize,
    pub n_docs: usize,
    pub n_queries: usize,
    pub mismatch: f64,
    /// Words in each topic's query vocabulary.
    pub query_vocab: usize,
    /// Words in each topic's document vocabulary, link words included.
    pub doc_vocab: usize,
    /// Words shared between each pair of neighbouring topics.
    pub link_words: usize,
    pub background_vocab: usize,
    /// Probability that a body token is a background word.
    pub background_rate: f64,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    pub title_len: usize,
    pub query_len: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_topics: 200,
            n_docs: 2000,
            n_queries: 300,
            mismatch: 0.5,
            query_vocab: 10,
            doc_vocab: 40,
            link_words: 6,
            background_vocab: 300,
            background_rate: 0.3,
            min_doc_len: 30,
            max_doc_len: 70,
            title_len: 3,
            query_len: 3,
            valid_fraction: 1.0 / 6.0,
            test_fraction: 1.0 / 6.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_topics < 1 {
            return Err(Error::invalid("n_topics must be at least 1"));
        }
        if self.n_docs < self.n_topics {
            return Err(Error::invalid("n_docs must be at least n_topics"));
        }
        if self.n_queries < 1 {
            return Err(Error::invalid("n_queries must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mismatch) {
            return Err(Error::invalid("mismatch must lie in [0, 1]"));
        }
        if self.query_vocab == 0 || self.query_len == 0 {
            return Err(Error::invalid("query vocabulary and length must be positive"));
        }
        let links = if self.n_topics > 1 { 2 * self.link_words } else { 0 };
        if self.doc_vocab <= links {
            return Err(Error::invalid("doc_vocab must exceed the link words"));
        }
        if self.min_doc_len == 0 || self.max_doc_len < self.min_doc_len {
            return Err(Error::invalid("bad document length range"));
        }
        if !(0.0..1.0).contains(&self.background_rate) {
            return Err(Error::invalid("background_rate must lie in [0, 1)"));
        }
        if self.valid_fraction < 0.0 || self.test_fraction < 0.0 || self.valid_fraction + self.test_fraction > 1.0 {
            return Err(Error::invalid("split fractions must be non-negative and sum to at most 1"));
        }
        Ok(())
    }
}

/// The generated corpus together with the latent structure behind it.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub corpus: Corpus,
    pub split: DatasetSplit,
    /// Document vocabulary per topic.
    pub doc_vocab: Vec<Vec<String>>,
    /// Query vocabulary per topic.
    pub query_vocab: Vec<Vec<String>>,
    pub background: Vec<String>,
    pub doc_topic: Vec<usize>,
    pub query_topic: Vec<(u32, usize)>,
}

pub fn generate_synthetic(
    seed: u64,
    n_topics: usize,
    n_docs: usize,
    n_queries: usize,
    mismatch: f64,
) -> Result<(Corpus, DatasetSplit)> {
    let cfg = SyntheticConfig { seed, n_topics, n_docs, n_queries, mismatch, ..Default::default() };
    let ds = SyntheticDataset::generate(&cfg)?;
    Ok((ds.corpus, ds.split))
}

fn core_word(t: usize, j: usize) -> String {
    format!("t{t}c{j}")
}

fn link_word(t: usize, j: usize) -> String {
    format!("t{t}l{j}")
}

fn query_word(t: usize, j: usize) -> String {
    format!("t{t}q{j}")
}

fn shared_query_words(cfg: &SyntheticConfig) -> usize {
    let n = ((1.0 - cfg.mismatch) * cfg.query_vocab as f64).round() as usize;
    n.min(cfg.doc_vocab)
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(s)).collect()
}

impl SyntheticDataset {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_topics = cfg.n_topics;
        let links = if n_topics > 1 { cfg.link_words } else { 0 };
        let n_core = cfg.doc_vocab - 2 * links;

        let background: Vec<String> = (0..cfg.background_vocab).map(|j| format!("b{j}")).collect();

        let mut doc_vocab = Vec::with_capacity(n_topics);
        for t in 0..n_topics {
            let prev = (t + n_topics - 1) % n_topics;
            let mut words: Vec<String> = (0..n_core).map(|j| core_word(t, j)).collect();
            words.extend((0..links).map(|j| link_word(t, j)));
            words.extend((0..links).map(|j| link_word(prev, j)));
            // Shuffled so the Zipf rank is unrelated to the word's role.
            words.shuffle(&mut rng);
            doc_vocab.push(words);
        }

        let n_shared = shared_query_words(cfg);
        let mut query_vocab = Vec::with_capacity(n_topics);
        for (t, dv) in doc_vocab.iter().enumerate() {
            let mut words: Vec<String> = dv.choose_multiple(&mut rng, n_shared).cloned().collect();
            words.extend((0..cfg.query_vocab - n_shared).map(|j| query_word(t, j)));
            query_vocab.push(words);
        }

        let topic_weights = WeightedIndex::new(zipf_weights(cfg.doc_vocab, 0.8)).expect("positive weights");
        let bg_weights = if cfg.background_vocab > 0 {
            Some(WeightedIndex::new(zipf_weights(cfg.background_vocab, 1.0)).expect("positive weights"))
        } else {
            None
        };

        // Every topic gets at least one document.
        let mut doc_topic: Vec<usize> = (0..cfg.n_docs).map(|i| i % n_topics).collect();
        doc_topic.shuffle(&mut rng);

        let mut docs = Vec::with_capacity(cfg.n_docs);
        let mut topic_docs: Vec<Vec<DocId>> = vec![Vec::new(); n_topics];
        for (i, &t) in doc_topic.iter().enumerate() {
            let id = i as DocId;
            let dv = &doc_vocab[t];
            let title = (0..cfg.title_len).map(|_| dv[topic_weights.sample(&mut rng)].clone()).collect();
            let len = rng.random_range(cfg.min_doc_len..=cfg.max_doc_len);
            let body = (0..len)
                .map(|_| match &bg_weights {
                    Some(bg) if rng.random::<f64>() < cfg.background_rate => background[bg.sample(&mut rng)].clone(),
                    _ => dv[topic_weights.sample(&mut rng)].clone(),
                })
                .collect();
            docs.push(Document { id, title, body });
            topic_docs[t].push(id);
        }
        let corpus = Corpus::new(docs)?;

        let mut queries = Vec::with_capacity(cfg.n_queries);
        let mut query_topic = Vec::with_capacity(cfg.n_queries);
        for qid in 0..cfg.n_queries as u32 {
            let t = rng.random_range(0..n_topics);
            let qv = &query_vocab[t];
            let tokens: Vec<String> = if cfg.query_len <= qv.len() {
                qv.choose_multiple(&mut rng, cfg.query_len).cloned().collect()
            } else {
                (0..cfg.query_len).map(|_| qv[rng.random_range(0..qv.len())].clone()).collect()
            };
            let mut relevant = topic_docs[t].clone();
            relevant.sort_unstable();
            queries.push(QueryRecord { qid, tokens, relevant });
            query_topic.push((qid, t));
        }

        let n_valid = (cfg.valid_fraction * cfg.n_queries as f64).round() as usize;
        let n_test = (cfg.test_fraction * cfg.n_queries as f64).round() as usize;
        let n_train = cfg.n_queries.saturating_sub(n_valid + n_test);
        let mut it = queries.into_iter();
        let split = DatasetSplit {
            train: it.by_ref().take(n_train).collect(),
            valid: it.by_ref().take(n_valid).collect(),
            test: it.collect(),
        };

        Ok(SyntheticDataset {
            config: cfg.clone(),
            corpus,
            split,
            doc_vocab,
            query_vocab,
            background,
            doc_topic,
            query_topic,
        })
    }

    /// Word vectors that cluster by topic.
    ///
    /// Topic words sit near a random unit centre, link words between the two
    /// topics they join, background words at the origin; every vector gets
    /// isotropic noise of expected norm `noise`. A fraction `oov_rate` of
    /// words is left out of the table.
    pub fn embeddings(&self, dim: usize, noise: f64, oov_rate: f64, seed: u64) -> Result<EmbeddingTable> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
            (0..dim).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect::<Vec<f64>>()
        };
        let n_topics = self.config.n_topics;
        let centres: Vec<Vec<f64>> = (0..n_topics)
            .map(|_| {
                let v = gauss(&mut rng, 1.0);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let noise_scale = noise / (dim as f64).sqrt();

        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        let mut push = |rng: &mut ChaCha8Rng, word: String, base: Option<Vec<f64>>| {
            if rng.random::<f64>() < oov_rate {
                return;
            }
            let mut v = gauss(rng, noise_scale);
            if let Some(b) = base {
                v.iter_mut().zip(b).for_each(|(x, c)| *x += c);
            }
            rows.push((word, v));
        };

        let links = if n_topics > 1 { self.config.link_words } else { 0 };
        let n_core = self.config.doc_vocab - 2 * links;
        let n_shared = shared_query_words(&self.config);
        for t in 0..n_topics {
            for j in 0..n_core {
                push(&mut rng, core_word(t, j), Some(centres[t].clone()));
            }
            let next = (t + 1) % n_topics;
            for j in 0..links {
                let mid: Vec<f64> = centres[t]
                    .iter()
                    .zip(&centres[next])
                    .map(|(a, b)| (a + b) / std::f64::consts::SQRT_2)
                    .collect();
                push(&mut rng, link_word(t, j), Some(mid));
            }
            for j in 0..self.config.query_vocab - n_shared {
                push(&mut rng, query_word(t, j), Some(centres[t].clone()));
            }
        }
        for w in &self.background {
            push(&mut rng, w.clone(), None);
        }
        EmbeddingTable::from_rows(rows, seed ^ 0x5eed)
    }
}
