//! Fixed pretrained word vectors plus one shared out-of-vocabulary vector.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Half-width of the uniform range the OOV vector is drawn from.
pub const OOV_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Array2<f64>,
    /// Trained alongside the model; every other row stays fixed.
    pub oov: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>, oov_seed: u64) -> Result<Self> {
        let dim = rows.first().map(|r| r.1.len()).ok_or_else(|| Error::invalid("no embedding rows"))?;
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut index = HashMap::with_capacity(rows.len());
        let mut words = Vec::with_capacity(rows.len());
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, (w, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Embedding {
                    line: i + 1,
                    msg: format!("expected {dim} components, found {}", v.len()),
                });
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Embedding { line: i + 1, msg: format!("duplicate token {w:?}") });
            }
            words.push(w);
            flat.extend(v);
        }
        let vectors = Array2::from_shape_vec((words.len(), dim), flat).expect("rows checked");
        let mut rng = ChaCha8Rng::seed_from_u64(oov_seed);
        let oov = (0..dim).map(|_| rng.random_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE)).collect();
        Ok(EmbeddingTable { dim, index, words, vectors, oov })
    }

    /// Gaussian rows (standard deviation `1/sqrt(dim)`) for `words`.
    pub fn random(words: &[String], dim: usize, seed: u64) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (dim as f64).sqrt();
        let rows = words
            .iter()
            .map(|w| {
                let v = (0..dim).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); s * z }).collect();
                (w.clone(), v)
            })
            .collect();
        Self::from_rows(rows, seed.wrapping_add(1))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn row_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// Stored row, or the shared OOV vector for unknown tokens.
    pub fn lookup(&self, token: &str) -> &[f64] {
        match self.index.get(token) {
            Some(&i) => self.vectors.row(i).to_slice().expect("standard layout"),
            None => &self.oov,
        }
    }

    /// Mean of the per-token lookups.
    pub fn query_embedding(&self, tokens: &[impl AsRef<str>]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::invalid("query embedding of an empty query"));
        }
        let mut acc = vec![0.0; self.dim];
        for t in tokens {
            acc.iter_mut().zip(self.lookup(t.as_ref())).for_each(|(a, x)| *a += x);
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn write_text(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for x in self.vectors.row(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_text(File::create(path)?)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, oov_seed: u64) -> Result<EmbeddingTable> {
    read_embeddings(BufReader::new(File::open(path)?), oov_seed)
}

/// Parses `token f1 ... fd` lines. A leading word2vec `count dim` header is
/// skipped.
pub fn read_embeddings(reader: impl BufRead, oov_seed: u64) -> Result<EmbeddingTable> {
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let vals: Vec<&str> = parts.collect();
        if lineno == 1 && vals.len() == 1 && word.parse::<usize>().is_ok() && vals[0].parse::<usize>().is_ok() {
            continue;
        }
        let v: Vec<f64> = vals
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Embedding { line: lineno, msg: format!("bad number: {e}") })?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::Embedding {
                    line: lineno,
                    msg: format!("expected {d} components, found {}", v.len()),
                })
            }
            _ => {}
        }
        if seen.insert(word.to_string(), lineno).is_some() {
            return Err(Error::Embedding { line: lineno, msg: format!("duplicate token {word:?}") });
        }
        rows.push((word.to_string(), v));
    }
    EmbeddingTable::from_rows(rows, oov_seed)
}

/// `a·b / (|a||b|)`, zero when either norm is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("cosine of {} and {} dims", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
