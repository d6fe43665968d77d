//! Salient-span masking for continual knowledge learning.
//!
//! Entities found by a tagger are replaced with `<extra_id_j>` sentinels and
//! the model is scored on predicting the spans back, serialized as
//! `"<extra_id_0> s0 <extra_id_1> s1 ..."`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::generator::{score, GeneratorBackend};
use crate::jsonl;

const SENTINEL_OPEN: &str = "<extra_id_";

pub fn sentinel(j: usize) -> String {
    format!("{SENTINEL_OPEN}{j}>")
}

/// Parses a sentinel at the start of `s`, returning its id and byte length.
fn sentinel_at(s: &str) -> Option<(usize, usize)> {
    let rest = s.strip_prefix(SENTINEL_OPEN)?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || rest.as_bytes().get(digits) != Some(&b'>') {
        return None;
    }
    let id = rest[..digits].parse().ok()?;
    Some((id, SENTINEL_OPEN.len() + digits + 1))
}

fn contains_sentinel(s: &str) -> bool {
    s.match_indices(SENTINEL_OPEN)
        .any(|(i, _)| sentinel_at(&s[i..]).is_some())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedSpanExample {
    pub passage_id: String,
    pub masked_text: String,
    /// `(sentinel id, original text)` in left-to-right order.
    pub spans: Vec<(usize, String)>,
    pub entity_count: usize,
}

impl MaskedSpanExample {
    /// The original passage text.
    pub fn reconstruct(&self) -> Result<String> {
        reconstruct(&self.masked_text, &self.spans)
    }
}

/// Case-sensitive entity list. Matches must start and end on word
/// boundaries wherever the entry itself starts or ends with an alphanumeric
/// character.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gazetteer {
    by_first_char: HashMap<char, Vec<String>>,
    len: usize,
}

impl Gazetteer {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut by_first_char: HashMap<char, Vec<String>> = HashMap::new();
        let mut len = 0;
        for e in entries {
            let e: String = e.into();
            if e.trim().is_empty() {
                return Err(Error::InvalidConfig("empty gazetteer entry".into()));
            }
            if e.contains(['<', '>']) {
                return Err(Error::InvalidConfig(format!(
                    "gazetteer entry {e:?} contains '<' or '>'"
                )));
            }
            let first = e.chars().next().expect("non-empty");
            let bucket = by_first_char.entry(first).or_default();
            if !bucket.contains(&e) {
                bucket.push(e);
                len += 1;
            }
        }
        for bucket in by_first_char.values_mut() {
            bucket.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        Ok(Gazetteer { by_first_char, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Non-overlapping byte ranges of entity matches, scanning left to
    /// right and preferring the longest entry at each position.
    pub fn find(&self, text: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < text.len() {
            let rest = &text[i..];
            if let Some((_, n)) = sentinel_at(rest) {
                i += n;
                continue;
            }
            let c = rest.chars().next().expect("in bounds");
            let hit = self.by_first_char.get(&c).and_then(|bucket| {
                bucket.iter().find(|e| {
                    rest.starts_with(e.as_str()) && on_boundaries(text, i, i + e.len(), e)
                })
            });
            match hit {
                Some(e) => {
                    out.push((i, i + e.len()));
                    i += e.len();
                }
                None => i += c.len_utf8(),
            }
        }
        out
    }
}

fn on_boundaries(text: &str, start: usize, end: usize, entry: &str) -> bool {
    let alnum = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
    let starts_word = alnum(entry.chars().next());
    let ends_word = alnum(entry.chars().next_back());
    !(starts_word && alnum(text[..start].chars().next_back()))
        && !(ends_word && alnum(text[end..].chars().next()))
}

/// One line of a pre-tagged span file. Offsets are character indices,
/// end-exclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedSpans {
    pub passage_id: String,
    pub spans: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EntityTagger {
    Gazetteer(Gazetteer),
    /// Spans produced by an external tagger, keyed by passage id.
    External(BTreeMap<String, Vec<(usize, usize)>>),
}

impl EntityTagger {
    pub fn load_external(path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for rec in jsonl::records::<TaggedSpans>(path)? {
            let (_, t) = rec?;
            map.insert(t.passage_id, t.spans);
        }
        Ok(EntityTagger::External(map))
    }

    /// Byte ranges to mask in `passage`, sorted and non-overlapping.
    pub fn tag(&self, passage: &Passage) -> Result<Vec<(usize, usize)>> {
        match self {
            EntityTagger::Gazetteer(g) => Ok(g.find(&passage.text)),
            EntityTagger::External(map) => {
                let Some(spans) = map.get(&passage.passage_id) else {
                    return Ok(Vec::new());
                };
                external_byte_ranges(&passage.passage_id, &passage.text, spans)
            }
        }
    }
}

fn external_byte_ranges(
    id: &str,
    text: &str,
    spans: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>> {
    let mut offsets: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    offsets.push(text.len());
    let mut sorted = spans.to_vec();
    sorted.sort_unstable();
    let mut out = Vec::with_capacity(sorted.len());
    let mut prev_end = 0;
    for (s, e) in sorted {
        if s >= e || e >= offsets.len() || s < prev_end {
            return Err(Error::InvalidDocument(format!(
                "passage {id}: bad or overlapping span [{s}, {e})"
            )));
        }
        out.push((offsets[s], offsets[e]));
        prev_end = e;
    }
    Ok(out)
}

/// Replaces every tagged entity with a sentinel. Passages that already
/// contain sentinels are returned unmasked so the spans stay unambiguous.
pub fn mask_passage(passage: &Passage, tagger: &EntityTagger) -> Result<MaskedSpanExample> {
    let text = &passage.text;
    let ranges = if contains_sentinel(text) {
        tracing::debug!(passage = %passage.passage_id, "already contains sentinels");
        Vec::new()
    } else {
        tagger.tag(passage)?
    };
    let mut masked = String::with_capacity(text.len());
    let mut spans = Vec::with_capacity(ranges.len());
    let mut pos = 0;
    for (j, &(s, e)) in ranges.iter().enumerate() {
        masked.push_str(&text[pos..s]);
        masked.push_str(&sentinel(j));
        spans.push((j, text[s..e].to_string()));
        pos = e;
    }
    masked.push_str(&text[pos..]);
    Ok(MaskedSpanExample {
        passage_id: passage.passage_id.clone(),
        masked_text: masked,
        entity_count: spans.len(),
        spans,
    })
}

pub fn mask_all(passages: &[Passage], tagger: &EntityTagger) -> Result<Vec<MaskedSpanExample>> {
    passages
        .par_iter()
        .map(|p| mask_passage(p, tagger))
        .collect()
}

/// The prediction target for a masked passage.
pub fn span_targets(example: &MaskedSpanExample) -> Result<String> {
    if example.entity_count == 0 || example.spans.is_empty() {
        return Err(Error::precondition(format!(
            "passage {} has no masked spans",
            example.passage_id
        )));
    }
    Ok(example
        .spans
        .iter()
        .map(|(j, s)| format!("{} {s}", sentinel(*j)))
        .collect::<Vec<_>>()
        .join(" "))
}

/// Inverse of [`span_targets`].
pub fn parse_targets(target: &str) -> Result<Vec<(usize, String)>> {
    let bad = || Error::precondition(format!("malformed span target {target:?}"));
    let mut spans = Vec::new();
    let mut rest = target
        .strip_prefix(&format!("{} ", sentinel(0)))
        .ok_or_else(bad)?;
    loop {
        let j = spans.len();
        let next = format!(" {}", sentinel(j + 1));
        match rest.find(&next) {
            Some(at) => {
                spans.push((j, rest[..at].to_string()));
                rest = rest[at + next.len()..].strip_prefix(' ').ok_or_else(bad)?;
            }
            None => {
                spans.push((j, rest.to_string()));
                return Ok(spans);
            }
        }
    }
}

/// Substitutes spans back at their sentinels. Each sentinel id must occur
/// exactly once and in order.
pub fn reconstruct(masked_text: &str, spans: &[(usize, String)]) -> Result<String> {
    let mut out = String::with_capacity(masked_text.len());
    let mut next = 0;
    let mut i = 0;
    while let Some(off) = masked_text[i..].find(SENTINEL_OPEN) {
        let at = i + off;
        match sentinel_at(&masked_text[at..]) {
            Some((id, n)) => {
                let Some((sid, text)) = spans.get(next) else {
                    return Err(Error::precondition(format!("no span for sentinel {id}")));
                };
                if *sid != id || id != next {
                    return Err(Error::precondition(format!(
                        "sentinel {id} out of order, expected {next}"
                    )));
                }
                out.push_str(&masked_text[i..at]);
                out.push_str(text);
                next += 1;
                i = at + n;
            }
            None => {
                out.push_str(&masked_text[i..at + SENTINEL_OPEN.len()]);
                i = at + SENTINEL_OPEN.len();
            }
        }
    }
    out.push_str(&masked_text[i..]);
    if next != spans.len() {
        return Err(Error::precondition(format!(
            "{} spans but {next} sentinels",
            spans.len()
        )));
    }
    Ok(out)
}

/// `-log Pr(targets | masked text)`.
pub fn ckl_loss(backend: &dyn GeneratorBackend, example: &MaskedSpanExample) -> Result<f64> {
    let target = span_targets(example)?;
    let s = score(backend, &example.masked_text, &target)?;
    Ok((-s.total_logprob).max(0.0))
}

/// Sum of per-passage losses.
pub fn batch_ckl_loss(
    backend: &dyn GeneratorBackend,
    examples: &[MaskedSpanExample],
) -> Result<f64> {
    let losses = examples
        .par_iter()
        .map(|e| ckl_loss(backend, e))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum())
}

/// CKL corpus line: `{"passage_id", "masked_text", "spans": [[j, text], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CklRecord {
    pub passage_id: String,
    pub masked_text: String,
    pub spans: Vec<(usize, String)>,
}

impl From<&MaskedSpanExample> for CklRecord {
    fn from(m: &MaskedSpanExample) -> Self {
        CklRecord {
            passage_id: m.passage_id.clone(),
            masked_text: m.masked_text.clone(),
            spans: m.spans.clone(),
        }
    }
}
