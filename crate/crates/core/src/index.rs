//! Inverted index with BM25 ranking and Dirichlet-smoothed document models.
//!
//! The index also keeps each document's token sequence (as term ids) so that
//! feedback terms and titles can be read back from search results.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocId, Vocabulary};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QRFIDX\0\0";
const FORMAT_VERSION: u32 = 1;

/// Dirichlet prior used by the language-model scorers.
pub const DEFAULT_DIRICHLET_MU: f64 = 1500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Internal document slot, not the external id.
    pub slot: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    vocab: Vocabulary,
    postings: Vec<Vec<Posting>>,
    collection_tf: Vec<u64>,
    doc_ids: Vec<DocId>,
    slots: HashMap<DocId, u32>,
    doc_terms: Vec<Vec<u32>>,
    title_lens: Vec<u32>,
    avg_doc_length: f64,
    collection_length: u64,
    params: Bm25Params,
}

/// Ranked `(doc id, score)` pairs, best first, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<(DocId, f64)>,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<DocId> {
        self.hits.iter().map(|h| h.0).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

#[inline]
fn bm25_term(idf: f64, tf: f64, doc_len: f64, avgdl: f64, p: Bm25Params) -> f64 {
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / avgdl))
}

fn by_score_then_id(a: &(DocId, f64), b: &(DocId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Result<Self> {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut vocab = Vocabulary::new();
        let mut doc_terms = Vec::with_capacity(corpus.len());
        let mut title_lens = Vec::with_capacity(corpus.len());
        let mut doc_ids = Vec::with_capacity(corpus.len());
        for doc in corpus.docs() {
            doc_ids.push(doc.id);
            title_lens.push(doc.title.len() as u32);
            doc_terms.push(doc.tokens().map(|t| vocab.insert(t)).collect());
        }
        Ok(Self::from_parts(vocab, doc_ids, doc_terms, title_lens, params))
    }

    fn from_parts(
        vocab: Vocabulary,
        doc_ids: Vec<DocId>,
        doc_terms: Vec<Vec<u32>>,
        title_lens: Vec<u32>,
        params: Bm25Params,
    ) -> Self {
        let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); vocab.len()];
        let mut collection_tf = vec![0u64; vocab.len()];
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for (slot, terms) in doc_terms.iter().enumerate() {
            counts.clear();
            for &t in terms {
                *counts.entry(t).or_insert(0) += 1;
            }
            let mut sorted: Vec<(u32, u32)> = counts.iter().map(|(&t, &c)| (t, c)).collect();
            sorted.sort_unstable();
            for (t, tf) in sorted {
                postings[t as usize].push(Posting { slot: slot as u32, tf });
                collection_tf[t as usize] += tf as u64;
            }
        }
        let collection_length: u64 = doc_terms.iter().map(|d| d.len() as u64).sum();
        let slots = doc_ids.iter().enumerate().map(|(s, &id)| (id, s as u32)).collect();
        InvertedIndex {
            avg_doc_length: collection_length as f64 / doc_ids.len() as f64,
            vocab,
            postings,
            collection_tf,
            doc_ids,
            slots,
            doc_terms,
            title_lens,
            collection_length,
            params,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_terms(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn collection_length(&self) -> u64 {
        self.collection_length
    }

    pub fn doc_ids(&self) -> &[DocId] {
        &self.doc_ids
    }

    pub fn contains_doc(&self, doc: DocId) -> bool {
        self.slots.contains_key(&doc)
    }

    fn slot(&self, doc: DocId) -> Result<usize> {
        self.slots.get(&doc).map(|&s| s as usize).ok_or(Error::UnknownDocument(doc))
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.vocab.id(term).map_or(&[], |t| &self.postings[t as usize])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn collection_tf(&self, term: &str) -> u64 {
        self.vocab.id(term).map_or(0, |t| self.collection_tf[t as usize])
    }

    pub fn doc_length(&self, doc: DocId) -> Result<usize> {
        Ok(self.doc_terms[self.slot(doc)?].len())
    }

    pub fn tf(&self, term: &str, doc: DocId) -> Result<u32> {
        let slot = self.slot(doc)? as u32;
        let p = self.postings(term);
        Ok(p.binary_search_by_key(&slot, |x| x.slot).map_or(0, |i| p[i].tf))
    }

    /// Full token sequence of a document (title then body).
    pub fn doc_tokens(&self, doc: DocId) -> Result<Vec<&str>> {
        let slot = self.slot(doc)?;
        Ok(self.doc_terms[slot].iter().map(|&t| self.vocab.token(t).expect("term id in range")).collect())
    }

    pub fn doc_title(&self, doc: DocId) -> Result<Vec<&str>> {
        let slot = self.slot(doc)?;
        let n = self.title_lens[slot] as usize;
        Ok(self.doc_terms[slot][..n].iter().map(|&t| self.vocab.token(t).expect("term id in range")).collect())
    }

    /// Lucene-style IDF, `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn bm25_score(&self, query: &[impl AsRef<str>], doc: DocId) -> Result<f64> {
        let slot = self.slot(doc)?;
        let len = self.doc_terms[slot].len() as f64;
        let mut score = 0.0;
        for term in query {
            let term = term.as_ref();
            let Some(t) = self.vocab.id(term) else { continue };
            let p = &self.postings[t as usize];
            if let Ok(i) = p.binary_search_by_key(&(slot as u32), |x| x.slot) {
                score += bm25_term(self.idf(term), p[i].tf as f64, len, self.avg_doc_length, self.params);
            }
        }
        Ok(score)
    }

    /// Top-`k` documents by BM25 over the union of the query terms' postings.
    /// Documents scoring zero never appear.
    pub fn search(&self, query: &[impl AsRef<str>], k: usize) -> SearchResult {
        if k == 0 {
            return SearchResult::default();
        }
        let mut acc = vec![0.0f64; self.n_docs()];
        let mut touched = vec![false; self.n_docs()];
        let mut hit_slots = Vec::new();
        for term in query {
            let term = term.as_ref();
            let Some(t) = self.vocab.id(term) else { continue };
            let idf = self.idf(term);
            for p in &self.postings[t as usize] {
                let s = p.slot as usize;
                let len = self.doc_terms[s].len() as f64;
                acc[s] += bm25_term(idf, p.tf as f64, len, self.avg_doc_length, self.params);
                if !touched[s] {
                    touched[s] = true;
                    hit_slots.push(s);
                }
            }
        }
        let mut hits: Vec<(DocId, f64)> = hit_slots
            .into_iter()
            .filter(|&s| acc[s] > 0.0)
            .map(|s| (self.doc_ids[s], acc[s]))
            .collect();
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, by_score_then_id);
            hits.truncate(k);
        }
        hits.sort_unstable_by(by_score_then_id);
        SearchResult { hits }
    }

    /// `P(t|C)`, zero for unseen terms.
    pub fn collection_prob(&self, term: &str) -> f64 {
        self.collection_tf(term) as f64 / self.collection_length as f64
    }

    /// Dirichlet-smoothed `P(t|d) = (tf + mu P(t|C)) / (|d| + mu)`.
    pub fn lm_prob(&self, term: &str, doc: DocId, mu: f64) -> Result<f64> {
        if mu <= 0.0 {
            return Err(Error::invalid("dirichlet mu must be positive"));
        }
        let tf = self.tf(term, doc)? as f64;
        let len = self.doc_length(doc)? as f64;
        Ok((tf + mu * self.collection_prob(term)) / (len + mu))
    }

    pub fn lm_query_likelihood(&self, query: &[impl AsRef<str>], doc: DocId, mu: f64) -> Result<f64> {
        self.slot(doc)?;
        query.iter().try_fold(1.0, |acc, w| Ok(acc * self.lm_prob(w.as_ref(), doc, mu)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(self.n_docs() as u64)?;
        w.write_f64::<LittleEndian>(self.params.k1)?;
        w.write_f64::<LittleEndian>(self.params.b)?;
        w.write_u64::<LittleEndian>(self.vocab.len() as u64)?;
        for tok in self.vocab.tokens() {
            w.write_u32::<LittleEndian>(tok.len() as u32)?;
            w.write_all(tok.as_bytes())?;
        }
        for (slot, terms) in self.doc_terms.iter().enumerate() {
            w.write_u32::<LittleEndian>(self.doc_ids[slot])?;
            w.write_u32::<LittleEndian>(self.title_lens[slot])?;
            w.write_u32::<LittleEndian>(terms.len() as u32)?;
            for &t in terms {
                w.write_u32::<LittleEndian>(t)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let n_docs = r.read_u64::<LittleEndian>()? as usize;
        if n_docs == 0 {
            return Err(Error::Format("index header declares zero documents".into()));
        }
        let params = Bm25Params { k1: r.read_f64::<LittleEndian>()?, b: r.read_f64::<LittleEndian>()? };
        let n_terms = r.read_u64::<LittleEndian>()? as usize;
        let mut vocab = Vocabulary::new();
        for _ in 0..n_terms {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let tok = String::from_utf8(buf).map_err(|_| Error::Format("term is not UTF-8".into()))?;
            vocab.insert(&tok);
        }
        if vocab.len() != n_terms {
            return Err(Error::Format("duplicate terms in index vocabulary".into()));
        }
        let mut doc_ids = Vec::with_capacity(n_docs);
        let mut title_lens = Vec::with_capacity(n_docs);
        let mut doc_terms = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            doc_ids.push(r.read_u32::<LittleEndian>()?);
            let title_len = r.read_u32::<LittleEndian>()?;
            let n = r.read_u32::<LittleEndian>()? as usize;
            if title_len as usize > n {
                return Err(Error::Format("title longer than document".into()));
            }
            title_lens.push(title_len);
            let mut terms = Vec::with_capacity(n);
            for _ in 0..n {
                let t = r.read_u32::<LittleEndian>()?;
                if t as usize >= n_terms {
                    return Err(Error::Format(format!("term id {t} out of range")));
                }
                terms.push(t);
            }
            doc_terms.push(terms);
        }
        Ok(Self::from_parts(vocab, doc_ids, doc_terms, title_lens, params))
    }
}
