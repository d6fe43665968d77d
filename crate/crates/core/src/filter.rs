//! Two-stage evidence filter.
//!
//! Stage 1 reduces a fetched page to its five paragraphs most similar to the
//! input (cosine over embeddings), kept in document order. Stage 2 measures
//! the model's output entropy with each candidate passage as context and
//! keeps the passages that make the model more confident than it was
//! without evidence.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{estimate_entropy, ConfidenceConfig};
use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::generator::GeneratorBackend;
use crate::unification::{render_prompt, TaskExample};

pub const STAGE1_PARAGRAPHS: usize = 5;

/// `u.v / (|u||v|)`, or 0 when either vector is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "been", "but", "by", "can", "did", "do",
    "does", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "of", "on", "or", "she", "so", "than", "that", "the", "their",
    "them", "then", "there", "these", "they", "this", "to", "was", "we", "were", "what", "when",
    "where", "which", "who", "whom", "why", "will", "with", "would", "you",
];

/// Lowercased alphanumeric runs with English stopwords removed.
pub fn content_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// TF-IDF vectors over a vocabulary fitted on a set of documents.
/// Weights are raw term count times smoothed IDF `ln((1+N)/(1+df)) + 1`;
/// terms outside the vocabulary are ignored.
#[derive(Clone, Debug)]
pub struct TfIdfEmbedder {
    vocab: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfIdfEmbedder {
    pub fn fit<'a>(documents: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for doc in documents {
            n += 1;
            let unique: HashSet<String> = content_terms(doc).into_iter().collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut vocab = HashMap::with_capacity(df.len());
        let mut idf = Vec::with_capacity(df.len());
        for (i, (term, d)) in df.into_iter().enumerate() {
            vocab.insert(term, i);
            idf.push(((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0);
        }
        TfIdfEmbedder { vocab, idf }
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }
}

impl Embedder for TfIdfEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.idf.len()];
        for t in content_terms(text) {
            if let Some(&i) = self.vocab.get(&t) {
                v[i] += self.idf[i];
            }
        }
        v
    }
}

/// Paragraphs are separated by blank lines; each is trimmed and empty ones
/// dropped.
pub fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n").trim().to_string());
    }
    paragraphs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Selection {
    /// Selected paragraphs in document order, joined by `"\n"`.
    pub text: String,
    /// Indices of the selected paragraphs, ascending.
    pub selected: Vec<usize>,
    /// Similarity of every paragraph to the input.
    pub similarities: Vec<f64>,
    /// The input embedded to the zero vector; the first paragraphs were
    /// taken instead.
    pub fallback: bool,
}

impl Stage1Selection {
    pub fn selected_similarities(&self) -> Vec<f64> {
        self.selected
            .iter()
            .map(|&i| self.similarities[i])
            .collect()
    }
}

/// Keeps the five paragraphs of `page_text` most similar to `input_text`.
/// Similarity ties go to the earlier paragraph.
pub fn stage1_select(
    input_text: &str,
    page_text: &str,
    embedder: &dyn Embedder,
) -> Result<Stage1Selection> {
    let paragraphs = split_paragraphs(page_text);
    if paragraphs.is_empty() {
        return Err(Error::precondition("page has no text"));
    }
    let query = embedder.embed(input_text);
    let similarities = paragraphs
        .iter()
        .map(|p| cosine(&query, &embedder.embed(p)))
        .collect::<Result<Vec<f64>>>()?;
    let fallback = query.iter().all(|&x| x == 0.0);
    if fallback {
        tracing::warn!("input embeds to the zero vector; keeping leading paragraphs");
    }
    let mut selected: Vec<usize> = (0..paragraphs.len()).collect();
    if !fallback {
        selected.sort_by(|&a, &b| similarities[b].total_cmp(&similarities[a]).then(a.cmp(&b)));
    }
    selected.truncate(STAGE1_PARAGRAPHS);
    selected.sort_unstable();
    let text = selected
        .iter()
        .map(|&i| paragraphs[i].as_str())
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Stage1Selection {
        text,
        selected,
        similarities,
        fallback,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub example_id: String,
    /// Final evidence, ascending by conditioned entropy.
    pub passages: Vec<Passage>,
    pub candidate_ids: Vec<String>,
    /// Stage-1 similarities of the paragraphs kept for each candidate; empty
    /// for candidates that did not go through stage 1.
    pub stage1_similarities: Vec<Vec<f64>>,
    /// Conditioned entropy per candidate, aligned with `candidate_ids`.
    pub stage2_entropies: Vec<f64>,
    /// Entropy with no evidence in the prompt.
    pub baseline_entropy: f64,
    /// No candidate lowered the entropy; the least-bad one was kept.
    pub fallback: bool,
}

/// Stage 2 with the baseline computed here from the closed-book prompt.
pub fn stage2_select(
    backend: &dyn GeneratorBackend,
    example: &TaskExample,
    candidates: &[Passage],
    config: &ConfidenceConfig,
    k_final: usize,
) -> Result<EvidenceSet> {
    let closed = render_prompt(example, &[])?;
    let baseline = estimate_entropy(backend, &closed.text, config)?;
    stage2_select_with_baseline(backend, example, candidates, config, k_final, baseline)
}

/// Keeps candidates whose conditioned entropy is strictly below `baseline`,
/// lowest first, at most `k_final` of them. If none qualifies, the single
/// lowest-entropy candidate is kept. Entropy ties keep candidate order.
pub fn stage2_select_with_baseline(
    backend: &dyn GeneratorBackend,
    example: &TaskExample,
    candidates: &[Passage],
    config: &ConfidenceConfig,
    k_final: usize,
    baseline: f64,
) -> Result<EvidenceSet> {
    if candidates.is_empty() {
        return Err(Error::precondition("stage 2 needs at least one candidate"));
    }
    if k_final == 0 {
        return Err(Error::precondition("k_final must be >= 1"));
    }
    let entropies = candidates
        .par_iter()
        .map(|p| {
            let prompt = render_prompt(example, std::slice::from_ref(p))?;
            estimate_entropy(backend, &prompt.text, config)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| entropies[a].total_cmp(&entropies[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| entropies[i] < baseline)
        .take(k_final)
        .collect();
    let fallback = kept.is_empty();
    if fallback {
        kept.push(order[0]);
    }
    Ok(EvidenceSet {
        example_id: example.example_id.clone(),
        passages: kept.iter().map(|&i| candidates[i].clone()).collect(),
        candidate_ids: candidates.iter().map(|p| p.passage_id.clone()).collect(),
        stage1_similarities: vec![Vec::new(); candidates.len()],
        stage2_entropies: entropies,
        baseline_entropy: baseline,
        fallback,
    })
}
