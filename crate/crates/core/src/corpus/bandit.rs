//! A tiny corpus where exactly one candidate term matters.
//!
//! The query `q` matches only document 0, whose body is `q target n0 n1 ..`.
//! The single relevant document 1 shares no word with the query but contains
//! `target`. Appending `target` lifts recall from 0 to 1; every other
//! candidate leaves it at 0. Filler documents keep collection statistics
//! non-degenerate.

use super::{Corpus, Document, QueryRecord};
use crate::error::Result;

pub const LIFTING_TERM: &str = "target";

#[derive(Debug, Clone)]
pub struct Bandit {
    pub corpus: Corpus,
    pub query: QueryRecord,
}

impl Bandit {
    pub fn new(noise_words: usize, fillers: usize) -> Result<Self> {
        let words = |w: &[String]| w.to_vec();
        let mut body0 = vec!["q".to_string(), LIFTING_TERM.to_string()];
        body0.extend((0..noise_words).map(|i| format!("n{i}")));
        let mut docs = vec![
            Document { id: 0, title: vec![], body: words(&body0) },
            Document { id: 1, title: vec![], body: vec![LIFTING_TERM.into(), "r1".into(), "r2".into()] },
        ];
        for i in 0..fillers {
            docs.push(Document {
                id: 2 + i as u32,
                title: vec![],
                body: (0..3).map(|j| format!("f{i}w{j}")).collect(),
            });
        }
        let corpus = Corpus::new(docs)?;
        let query = QueryRecord { qid: 0, tokens: vec!["q".into()], relevant: vec![1] };
        query.validate(&corpus)?;
        Ok(Bandit { corpus, query })
    }

    /// Every distinct word in the corpus.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self.corpus.docs().iter().flat_map(|d| d.tokens().cloned()).collect();
        v.sort();
        v.dedup();
        v
    }
}
