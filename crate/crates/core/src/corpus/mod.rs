//! Documents, queries and the newline-delimited files they are stored in.
//!
//! Corpus files carry one JSON object per line with `id`, `title` and `text`.
//! Dataset files carry `qid`, `query`, `relevant_ids` and an optional `split`
//! (`train`, `valid` or `test`; records without one go to `train`).

pub mod bandit;
pub mod convert;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset};

pub type DocId = u32;
pub type QueryId = u32;

/// Lowercases and splits on every non-alphanumeric character.
///
/// No stemming and no stopword removal: frequent function words stay in
/// the candidate pool.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: DocId,
    pub title: Vec<String>,
    pub body: Vec<String>,
}

impl Document {
    /// Title followed by body, the text that gets indexed.
    pub fn tokens(&self) -> impl Iterator<Item = &String> + '_ {
        self.title.iter().chain(self.body.iter())
    }

    pub fn len(&self) -> usize {
        self.title.len() + self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<DocId, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (pos, doc) in docs.iter().enumerate() {
            if doc.body.is_empty() {
                return Err(Error::EmptyDocument { line: pos + 1, id: doc.id });
            }
            if by_id.insert(doc.id, pos).is_some() {
                return Err(Error::DuplicateDocument(doc.id));
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: DocId) -> Option<&Document> {
        self.by_id.get(&id).map(|&p| &self.docs[p])
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.by_id.contains_key(&id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    id: DocId,
    #[serde(default)]
    title: String,
    text: String,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let reader = BufReader::new(File::open(path)?);
    read_corpus(reader)
}

pub fn read_corpus(reader: impl BufRead) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        if !seen.insert(rec.id) {
            return Err(Error::DuplicateDocument(rec.id));
        }
        let body = tokenize(&rec.text);
        if body.is_empty() {
            return Err(Error::EmptyDocument { line: lineno, id: rec.id });
        }
        docs.push(Document { id: rec.id, title: tokenize(&rec.title), body });
    }
    Corpus::new(docs)
}

pub fn write_corpus(corpus: &Corpus, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for doc in corpus.docs() {
        let rec = DocRecord { id: doc.id, title: doc.title.join(" "), text: doc.body.join(" ") };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: QueryId,
    pub tokens: Vec<String>,
    pub relevant: Vec<DocId>,
}

impl QueryRecord {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidQuery { qid: self.qid, msg: "query has no tokens".into() });
        }
        if self.relevant.is_empty() {
            return Err(Error::InvalidQuery { qid: self.qid, msg: "no relevant documents".into() });
        }
        if let Some(&doc) = self.relevant.iter().find(|d| !corpus.contains(**d)) {
            return Err(Error::UnknownRelevant { qid: self.qid, doc });
        }
        Ok(())
    }

    pub fn relevant_set(&self) -> HashSet<DocId> {
        self.relevant.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<QueryRecord>,
    pub valid: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
}

impl DatasetSplit {
    pub fn get(&self, split: Split) -> &[QueryRecord] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &QueryRecord)> {
        self.train
            .iter()
            .map(|q| (Split::Train, q))
            .chain(self.valid.iter().map(|q| (Split::Valid, q)))
            .chain(self.test.iter().map(|q| (Split::Test, q)))
    }

    /// Checks every query against the corpus and that qids are disjoint.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let mut seen = HashSet::new();
        for (_, q) in self.iter() {
            q.validate(corpus)?;
            if !seen.insert(q.qid) {
                return Err(Error::DuplicateQuery(q.qid));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryLine {
    qid: QueryId,
    query: String,
    relevant_ids: Vec<DocId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

pub fn load_dataset(path: impl AsRef<Path>, corpus: &Corpus) -> Result<DatasetSplit> {
    read_dataset(BufReader::new(File::open(path)?), corpus)
}

pub fn read_dataset(reader: impl BufRead, corpus: &Corpus) -> Result<DatasetSplit> {
    let mut out = DatasetSplit::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(rec.qid) {
            return Err(Error::DuplicateQuery(rec.qid));
        }
        let q = QueryRecord { qid: rec.qid, tokens: tokenize(&rec.query), relevant: rec.relevant_ids };
        q.validate(corpus)?;
        match rec.split.unwrap_or(Split::Train) {
            Split::Train => out.train.push(q),
            Split::Valid => out.valid.push(q),
            Split::Test => out.test.push(q),
        }
    }
    Ok(out)
}

pub fn write_dataset(split: &DatasetSplit, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for (s, q) in split.iter() {
        let rec = QueryLine {
            qid: q.qid,
            query: q.tokens.join(" "),
            relevant_ids: q.relevant.clone(),
            split: Some(s),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Dense bijective token ↔ id map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl FromIterator<String> for Vocabulary {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut v = Vocabulary::new();
        for t in iter {
            v.insert(&t);
        }
        v
    }
}
