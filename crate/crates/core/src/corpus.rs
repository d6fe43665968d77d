//! Document ingestion and fixed-size passage chunking.
//!
//! A token is a whitespace-delimited word. Passages are greedy windows of
//! `passage_size` tokens; the last window of a document may be shorter.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{self, Loaded};

pub const DEFAULT_PASSAGE_SIZE: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: Option<String>,
    pub text: String,
    pub source_url: Option<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            title: None,
            text: text.into(),
            source_url: None,
        };
        doc.validate()?;
        Ok(doc)
    }

    fn validate(&self) -> Result<()> {
        if self.doc_id.is_empty() {
            return Err(Error::InvalidDocument("empty doc_id".into()));
        }
        if self.text.trim().is_empty() {
            return Err(Error::InvalidDocument(format!(
                "document {:?} has empty text",
                self.doc_id
            )));
        }
        Ok(())
    }
}

/// The unit of retrieval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub token_count: usize,
}

impl Passage {
    /// Builds a passage whose id is derived as `doc_id:ordinal`.
    pub fn new(doc_id: impl Into<String>, ordinal: usize, text: impl Into<String>) -> Self {
        let doc_id = doc_id.into();
        let text = text.into();
        Passage {
            passage_id: format!("{doc_id}:{ordinal}"),
            token_count: tokenize(&text).len(),
            doc_id,
            ordinal,
            text,
        }
    }
}

/// Splits on Unicode whitespace, dropping empty tokens.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Greedy left-to-right windowing of the document's tokens.
pub fn chunk(document: &Document, passage_size: usize) -> Result<Vec<Passage>> {
    if passage_size == 0 {
        return Err(Error::precondition("passage_size must be >= 1"));
    }
    let tokens = tokenize(&document.text);
    Ok(tokens
        .chunks(passage_size)
        .enumerate()
        .map(|(ordinal, window)| Passage::new(document.doc_id.clone(), ordinal, window.join(" ")))
        .collect())
}

/// Chunks every document in parallel, preserving document order.
pub fn chunk_all(documents: &[Document], passage_size: usize) -> Result<Vec<Passage>> {
    let chunked: Result<Vec<Vec<Passage>>> = documents
        .par_iter()
        .map(|d| chunk(d, passage_size))
        .collect();
    Ok(chunked?.into_iter().flatten().collect())
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
    #[serde(default)]
    url: Option<String>,
}

/// Streams documents from a corpus JSONL file in file order.
///
/// Malformed records (bad JSON, missing fields, empty text, duplicate ids)
/// come through as `Error::Record` items carrying the 1-based line number;
/// iteration continues past them.
pub fn ingest_corpus(path: &Path) -> Result<impl Iterator<Item = Result<Document>>> {
    let mut seen = HashSet::new();
    let iter = jsonl::records::<CorpusRecord>(path)?.map(move |rec| {
        let (line, rec) = rec?;
        let doc = Document {
            doc_id: rec.id,
            title: rec.title,
            text: rec.text,
            source_url: rec.url,
        };
        doc.validate().map_err(|e| Error::Record {
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::Record {
                line,
                message: format!("duplicate doc_id {:?}", doc.doc_id),
            });
        }
        Ok(doc)
    });
    Ok(iter)
}

/// Collects [`ingest_corpus`] into documents plus record-level errors.
/// I/O failures are still fatal.
pub fn load_corpus(path: &Path) -> Result<Loaded<Document>> {
    let mut loaded = Loaded::default();
    for item in ingest_corpus(path)? {
        match item {
            Ok(doc) => loaded.records.push(doc),
            Err(e @ Error::Record { .. }) => loaded.errors.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(loaded)
}
