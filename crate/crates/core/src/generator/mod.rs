//! Language-model backend contract: sampling and scoring with per-token
//! log-probabilities.

mod http;
mod mock;

use serde::{Deserialize, Serialize};

pub use self::http::{HttpGenerator, SampleRequest, SampleResponse, ScoreRequest, WireSample};
pub use mock::{Distribution, MockModel, FALLBACK_KEY};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Log-probability assigned to targets outside a model's support.
pub const IMPOSSIBLE_LOGPROB: f64 = -1e9;

/// Consumers treat any total at or below this as "impossible".
pub const IMPOSSIBLE_THRESHOLD: f64 = -1e8;

const SUM_TOLERANCE: f64 = 1e-9;

/// One output with its natural-log token probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSample {
    pub text: String,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    pub total_logprob: f64,
}

impl GenerationSample {
    /// Builds a sample whose total is the sum of its token log-probs.
    pub fn new(text: impl Into<String>, tokens: Vec<String>, token_logprobs: Vec<f64>) -> Self {
        let total_logprob = token_logprobs.iter().sum();
        GenerationSample {
            text: text.into(),
            tokens,
            token_logprobs,
            total_logprob,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_impossible(&self) -> bool {
        self.total_logprob <= IMPOSSIBLE_THRESHOLD
    }

    /// Checks the invariants every backend must honour.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::ContractViolation(format!(
                "sample {:?} has no tokens",
                self.text
            )));
        }
        if self.tokens.len() != self.token_logprobs.len() {
            return Err(Error::ContractViolation(format!(
                "{} tokens but {} log-probs",
                self.tokens.len(),
                self.token_logprobs.len()
            )));
        }
        if let Some(lp) = self
            .token_logprobs
            .iter()
            .find(|lp| !(lp.is_finite() && **lp <= 0.0))
        {
            return Err(Error::ContractViolation(format!(
                "invalid token log-prob {lp}"
            )));
        }
        let sum: f64 = self.token_logprobs.iter().sum();
        if (sum - self.total_logprob).abs() > SUM_TOLERANCE * sum.abs().max(1.0) {
            return Err(Error::ContractViolation(format!(
                "total_logprob {} != sum of token log-probs {sum}",
                self.total_logprob
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub n_samples: usize,
    pub max_tokens: usize,
    /// 0 means greedy decoding.
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            n_samples: 1,
            max_tokens: 64,
            temperature: 1.0,
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn greedy(max_tokens: usize) -> Self {
        SamplingParams {
            n_samples: 1,
            max_tokens,
            temperature: 0.0,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.max_tokens == 0 {
            return Err(Error::InvalidConfig(
                "n_samples and max_tokens must be >= 1".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A model server or in-process model. Implementations must be callable
/// from many threads at once.
pub trait GeneratorBackend: Send + Sync {
    fn sample(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<GenerationSample>>;

    /// Scores `target` as a continuation of `prompt`.
    fn score(&self, prompt: &str, target: &str) -> Result<GenerationSample>;
}

/// Draws `params.n_samples` outputs and checks the backend's answer against
/// the contract.
pub fn sample(
    backend: &dyn GeneratorBackend,
    prompt: &str,
    params: &SamplingParams,
) -> Result<Vec<GenerationSample>> {
    if prompt.is_empty() {
        return Err(Error::precondition("prompt must be non-empty"));
    }
    params.validate()?;
    let samples = backend.sample(prompt, params)?;
    if samples.len() != params.n_samples {
        return Err(Error::ContractViolation(format!(
            "asked for {} samples, got {}",
            params.n_samples,
            samples.len()
        )));
    }
    for s in &samples {
        s.validate()?;
    }
    Ok(samples)
}

/// `log Pr(target | prompt)` with its per-token breakdown.
pub fn score(
    backend: &dyn GeneratorBackend,
    prompt: &str,
    target: &str,
) -> Result<GenerationSample> {
    if prompt.is_empty() || tokenize(target).is_empty() {
        return Err(Error::precondition("prompt and target must be non-empty"));
    }
    let s = backend.score(prompt, target)?;
    s.validate()?;
    Ok(s)
}

/// Negative log-likelihood of `target` averaged over its tokens.
pub fn mean_nll(backend: &dyn GeneratorBackend, prompt: &str, target: &str) -> Result<f64> {
    let s = score(backend, prompt, target)?;
    Ok(-s.total_logprob / s.len() as f64)
}

/// Single greedy decode.
pub fn generate_greedy(
    backend: &dyn GeneratorBackend,
    prompt: &str,
    max_tokens: usize,
) -> Result<GenerationSample> {
    let mut samples = sample(backend, prompt, &SamplingParams::greedy(max_tokens))?;
    Ok(samples.remove(0))
}
