//! Table-driven mock model whose distributions are fully enumerable.
//!
//! Each prompt maps to a finite distribution over whole outputs. Token-level
//! log-probabilities are the conditionals implied by that distribution: the
//! probability of token `i` given the prompt and tokens `< i` is the mass of
//! outputs sharing the longer prefix over the mass sharing the shorter one,
//! with the final token also absorbing the end-of-output factor. The token
//! log-probs of an output therefore always sum to the log of its table entry.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{GenerationSample, GeneratorBackend, SamplingParams, IMPOSSIBLE_LOGPROB};
use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Table key whose distribution answers any prompt missing from the table.
pub const FALLBACK_KEY: &str = "*";

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
struct Outcome {
    text: String,
    tokens: Vec<String>,
    prob: f64,
}

/// A validated output distribution for one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    outcomes: Vec<Outcome>,
}

impl Distribution {
    /// Probabilities must be positive and sum to 1 within 1e-9. Outputs must
    /// have at least one token and be distinct after tokenization.
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let mut outcomes: Vec<Outcome> = entries
            .into_iter()
            .map(|(text, prob)| {
                let text = text.into();
                let tokens = tokenize(&text).into_iter().map(str::to_owned).collect();
                Outcome { text, tokens, prob }
            })
            .collect();
        if outcomes.is_empty() {
            return Err(Error::InvalidConfig("empty distribution".into()));
        }
        outcomes.sort_by(|a, b| a.text.cmp(&b.text));
        for o in &outcomes {
            if !(o.prob > 0.0 && o.prob.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "probability of {:?} must be > 0, got {}",
                    o.text, o.prob
                )));
            }
            if o.tokens.is_empty() {
                return Err(Error::InvalidConfig(
                    "outputs must have at least one token".into(),
                ));
            }
        }
        for (i, a) in outcomes.iter().enumerate() {
            if outcomes[i + 1..].iter().any(|b| b.tokens == a.tokens) {
                return Err(Error::InvalidConfig(format!(
                    "outputs tokenizing like {:?} appear twice",
                    a.text
                )));
            }
        }
        let total: f64 = outcomes.iter().map(|o| o.prob).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Distribution { outcomes })
    }

    /// A single output with probability 1.
    pub fn point(text: impl Into<String>) -> Self {
        Distribution::new([(text.into(), 1.0)]).expect("point distribution is valid")
    }

    /// `n` equally likely outputs `"{prefix}0" .. "{prefix}{n-1}"`.
    pub fn uniform(prefix: &str, n: usize) -> Self {
        let p = 1.0 / n as f64;
        Distribution::new((0..n).map(|i| (format!("{prefix}{i}"), p)))
            .expect("uniform distribution is valid")
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> {
        self.outcomes.iter().map(|o| (o.text.as_str(), o.prob))
    }

    pub fn prob(&self, text: &str) -> Option<f64> {
        let tokens: Vec<&str> = tokenize(text);
        self.outcomes
            .iter()
            .find(|o| {
                o.tokens
                    .iter()
                    .map(String::as_str)
                    .eq(tokens.iter().copied())
            })
            .map(|o| o.prob)
    }

    /// Exact `E[-log p(Y)]` over the table.
    pub fn entropy(&self) -> f64 {
        self.outcomes.iter().map(|o| -o.prob * o.prob.ln()).sum()
    }

    fn prefix_mass(&self, prefix: &[String]) -> f64 {
        self.outcomes
            .iter()
            .filter(|o| o.tokens.starts_with(prefix))
            .map(|o| o.prob)
            .sum()
    }

    fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, o) in self.outcomes.iter().enumerate() {
            if o.prob > self.outcomes[best].prob {
                best = i;
            }
        }
        best
    }

    /// The sample for outcome `i`, truncated to `max_tokens`.
    fn sample_of(&self, i: usize, max_tokens: usize) -> GenerationSample {
        let outcome = &self.outcomes[i];
        let m = outcome.tokens.len().min(max_tokens);
        let complete = m == outcome.tokens.len();
        let mut lps = Vec::with_capacity(m);
        let mut prev = 1.0f64;
        for j in 1..m {
            let cur = self.prefix_mass(&outcome.tokens[..j]);
            lps.push((cur.ln() - prev.ln()).min(0.0));
            prev = cur;
        }
        let last = if complete {
            // Pin the total to the table entry.
            let so_far: f64 = lps.iter().sum();
            outcome.prob.ln() - so_far
        } else {
            self.prefix_mass(&outcome.tokens[..m]).ln() - prev.ln()
        };
        lps.push(last.min(0.0));
        let tokens = outcome.tokens[..m].to_vec();
        let text = if complete {
            outcome.text.clone()
        } else {
            tokens.join(" ")
        };
        GenerationSample::new(text, tokens, lps)
    }
}

/// Prompt-keyed table of output distributions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MockModel {
    table: BTreeMap<String, Distribution>,
}

impl MockModel {
    pub fn new() -> Self {
        MockModel::default()
    }

    pub fn insert(&mut self, prompt: impl Into<String>, dist: Distribution) -> &mut Self {
        self.table.insert(prompt.into(), dist);
        self
    }

    pub fn with(mut self, prompt: impl Into<String>, dist: Distribution) -> Self {
        self.insert(prompt, dist);
        self
    }

    pub fn distribution(&self, prompt: &str) -> Result<&Distribution> {
        self.table
            .get(prompt)
            .or_else(|| self.table.get(FALLBACK_KEY))
            .ok_or_else(|| Error::UnknownPrompt(prompt.to_string()))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Parses `{prompt: {output: probability}}`.
    pub fn from_json(json: &str) -> Result<Self> {
        let raw: BTreeMap<String, BTreeMap<String, f64>> = serde_json::from_str(json)?;
        let mut model = MockModel::new();
        for (prompt, entries) in raw {
            let dist = Distribution::new(entries).map_err(|e| {
                Error::InvalidConfig(format!("mock entry for prompt {prompt:?}: {e}"))
            })?;
            model.insert(prompt, dist);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, BTreeMap<&str, f64>> = self
            .table
            .iter()
            .map(|(p, d)| (p.as_str(), d.entries().collect()))
            .collect();
        serde_json::to_string_pretty(&raw).expect("string keys serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MockModel::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn prompt_seed(seed: u64, prompt: &str) -> u64 {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(bytes)
}

impl GeneratorBackend for MockModel {
    fn sample(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<GenerationSample>> {
        let dist = self.distribution(prompt)?;
        if params.temperature == 0.0 {
            let s = dist.sample_of(dist.argmax(), params.max_tokens);
            return Ok(vec![s; params.n_samples]);
        }
        let weights: Vec<f64> = dist
            .outcomes
            .iter()
            .map(|o| o.prob.powf(1.0 / params.temperature))
            .collect();
        let index = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidConfig(format!("cannot sample at this temperature: {e}")))?;
        let cache: Vec<GenerationSample> = (0..dist.outcomes.len())
            .map(|i| dist.sample_of(i, params.max_tokens))
            .collect();
        let draw = |rng: &mut dyn rand::RngCore| cache[index.sample(rng)].clone();
        Ok(match params.seed {
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(prompt_seed(seed, prompt));
                (0..params.n_samples).map(|_| draw(&mut rng)).collect()
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(rand::rng().random());
                (0..params.n_samples).map(|_| draw(&mut rng)).collect()
            }
        })
    }

    fn score(&self, prompt: &str, target: &str) -> Result<GenerationSample> {
        let dist = self.distribution(prompt)?;
        let tokens: Vec<String> = tokenize(target).into_iter().map(str::to_owned).collect();
        match dist.outcomes.iter().position(|o| o.tokens == tokens) {
            Some(i) => {
                let mut s = dist.sample_of(i, usize::MAX);
                s.text = target.to_string();
                Ok(s)
            }
            None => {
                let m = tokens.len().max(1);
                let lps = vec![IMPOSSIBLE_LOGPROB / m as f64; m];
                Ok(GenerationSample::new(target, tokens, lps))
            }
        }
    }
}
