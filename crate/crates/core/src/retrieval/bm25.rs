//! Immutable BM25 inverted index over passages.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::error::{Error, Result};

/// Term frequency saturation.
pub const BM25_K1: f64 = 1.2;
/// Length normalization strength.
pub const BM25_B: f64 = 0.75;

const INDEX_FILE: &str = "index.json";

/// Index terms: whitespace tokens, lowercased, with leading and trailing
/// non-alphanumeric characters trimmed. Tokens that trim to nothing are dropped.
pub fn analyze(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Robertson-Sparck-Jones IDF with +1 inside the log, so never negative.
pub fn idf(n_passages: usize, df: usize) -> f64 {
    let n = n_passages as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Per-term contribution to a passage's BM25 score.
pub fn term_score(tf: f64, idf: f64, len: f64, avg_len: f64) -> f64 {
    let norm = 1.0 - BM25_B + BM25_B * len / avg_len;
    idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage: Passage,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Posting {
    passage: u32,
    tf: u32,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Index {
    passages: Vec<Passage>,
    lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avg_len: f64,
}

impl Index {
    /// Builds the index. Passage ids must be unique.
    pub fn build(passages: impl IntoIterator<Item = Passage>) -> Result<Self> {
        let mut index = Index::default();
        let mut seen = HashSet::new();
        let mut total_len = 0u64;
        for passage in passages {
            if !seen.insert(passage.passage_id.clone()) {
                return Err(Error::DuplicatePassage(passage.passage_id));
            }
            let slot = index.passages.len() as u32;
            let terms = analyze(&passage.text);
            let mut tfs: HashMap<String, u32> = HashMap::new();
            for t in &terms {
                *tfs.entry(t.clone()).or_default() += 1;
            }
            for (term, tf) in tfs {
                index
                    .postings
                    .entry(term)
                    .or_default()
                    .push(Posting { passage: slot, tf });
            }
            total_len += terms.len() as u64;
            index.lengths.push(terms.len() as u32);
            index.passages.push(passage);
        }
        if !index.passages.is_empty() {
            index.avg_len = total_len as f64 / index.passages.len() as f64;
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    /// Number of passages containing `term` (after analysis).
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    /// Top-`k` passages by BM25. Ties go to the smaller passage id; passages
    /// sharing no term with the query are never returned.
    pub fn query(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>> {
        if k == 0 {
            return Err(Error::precondition("k must be >= 1"));
        }
        let terms: BTreeSet<String> = analyze(query).into_iter().collect();
        if terms.is_empty() {
            return Err(Error::InvalidQuery(query.to_string()));
        }
        let n = self.passages.len();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let w = idf(n, postings.len());
            for p in postings {
                let len = self.lengths[p.passage as usize] as f64;
                *scores.entry(p.passage).or_insert(0.0) +=
                    term_score(p.tf as f64, w, len, self.avg_len);
            }
        }
        let mut hits: Vec<(u32, f64)> = scores.into_iter().collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| {
                self.passages[a.0 as usize]
                    .passage_id
                    .cmp(&self.passages[b.0 as usize].passage_id)
            })
        });
        Ok(hits
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (slot, score))| ScoredPassage {
                passage: self.passages[slot as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }

    /// Writes `index.json` under `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(INDEX_FILE);
        let bytes = serde_json::to_vec(self)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
