//! Converters from TREC-CAR-style dumps to the native record formats.
//!
//! Paragraph dumps are `paragraph_id<TAB>text` lines; string ids are mapped to
//! dense integers in order of first appearance. Topics are `query_id<TAB>text`
//! and qrels use the four-column TREC layout `query_id iter paragraph_id rel`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde_json::json;

use super::{tokenize, DocId, Split};
use crate::error::{Error, Result};

/// Writes a native corpus and returns the string-id → integer-id map.
pub fn convert_paragraphs(reader: impl BufRead, mut out: impl Write) -> Result<HashMap<String, DocId>> {
    let mut ids = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (pid, text) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            line: i + 1,
            msg: "expected `id<TAB>text`".into(),
        })?;
        if tokenize(text).is_empty() {
            continue;
        }
        let next = ids.len() as DocId;
        if ids.insert(pid.to_string(), next).is_some() {
            return Err(Error::Malformed { line: i + 1, msg: format!("duplicate paragraph id {pid}") });
        }
        serde_json::to_writer(&mut out, &json!({ "id": next, "title": "", "text": text }))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(ids)
}

/// Joins topics with qrels and writes a native dataset. Queries without any
/// resolvable relevant paragraph are dropped; the count of dropped queries is
/// returned.
pub fn convert_queries(
    topics: impl BufRead,
    qrels: impl BufRead,
    doc_ids: &HashMap<String, DocId>,
    split: Split,
    mut out: impl Write,
) -> Result<usize> {
    let mut rel: HashMap<String, Vec<DocId>> = HashMap::new();
    for (i, line) in qrels.lines().enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::Malformed { line: i + 1, msg: "qrels lines need 4 columns".into() });
        }
        let grade: i32 = cols[3].parse().map_err(|_| Error::Malformed {
            line: i + 1,
            msg: format!("bad relevance grade {:?}", cols[3]),
        })?;
        if grade > 0 {
            if let Some(&d) = doc_ids.get(cols[2]) {
                rel.entry(cols[0].to_string()).or_default().push(d);
            }
        }
    }

    let mut qids: BTreeMap<String, u32> = BTreeMap::new();
    let mut dropped = 0;
    for (i, line) in topics.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            line: i + 1,
            msg: "expected `query_id<TAB>text`".into(),
        })?;
        let Some(docs) = rel.get(qid) else {
            dropped += 1;
            continue;
        };
        if tokenize(text).is_empty() {
            dropped += 1;
            continue;
        }
        let next = qids.len() as u32;
        let num = *qids.entry(qid.to_string()).or_insert(next);
        let mut docs = docs.clone();
        docs.sort_unstable();
        docs.dedup();
        serde_json::to_writer(
            &mut out,
            &json!({ "qid": num, "query": text, "relevant_ids": docs, "split": split }),
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(dropped)
}
