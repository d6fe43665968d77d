//! Self-evaluation: decide per example whether the model needs retrieved
//! evidence.
//!
//! Three criteria are available:
//!
//! * `entropy`: Monte-Carlo estimate of `E[-log Pr(Y|X)]` over sampled
//!   outputs; retrieve when it exceeds `entropy_threshold`. The estimate sums
//!   token log-probs without length normalization, so long outputs trend
//!   towards higher values.
//! * `loss`: mean per-token negative log-likelihood of the greedy output;
//!   retrieve when it exceeds `loss_threshold`.
//! * `sample_prompt`: show the model its own greedy answer next to four
//!   sampled alternatives and ask whether the answer is true; retrieve unless
//!   "(A) True" strictly outscores "(B) False".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{self, GeneratorBackend, SamplingParams};

pub const DEFAULT_N_SAMPLES: usize = 200;
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 4.0;
pub const DEFAULT_LOSS_THRESHOLD: f64 = 0.5;

pub const TRUE_OPTION: &str = "(A) True";
pub const FALSE_OPTION: &str = "(B) False";

const BRAINSTORMED: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Entropy,
    SamplePrompt,
    Loss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceConfig {
    pub criterion: Criterion,
    pub n_samples: usize,
    pub entropy_threshold: f64,
    pub loss_threshold: f64,
    /// `n_samples` here is ignored; the field above wins.
    pub sampling: SamplingParams,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig {
            criterion: Criterion::Entropy,
            n_samples: DEFAULT_N_SAMPLES,
            entropy_threshold: DEFAULT_ENTROPY_THRESHOLD,
            loss_threshold: DEFAULT_LOSS_THRESHOLD,
            sampling: SamplingParams {
                seed: Some(0),
                ..SamplingParams::default()
            },
        }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.criterion == Criterion::Entropy && self.n_samples < 2 {
            return Err(Error::InvalidConfig(
                "entropy criterion needs n_samples >= 2".into(),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be >= 1".into()));
        }
        if self.entropy_threshold.is_nan() || self.loss_threshold.is_nan() {
            return Err(Error::InvalidConfig("thresholds must not be NaN".into()));
        }
        self.sampling.validate()
    }

    fn sampling_params(&self) -> SamplingParams {
        SamplingParams {
            n_samples: self.n_samples,
            ..self.sampling.clone()
        }
    }

    fn threshold(&self) -> f64 {
        match self.criterion {
            Criterion::Entropy => self.entropy_threshold,
            Criterion::Loss => self.loss_threshold,
            Criterion::SamplePrompt => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub example_id: String,
    pub criterion: Criterion,
    /// Entropy, mean loss, or the True-minus-False log-prob margin.
    pub value: f64,
    pub threshold: f64,
    pub needs_retrieval: bool,
    pub samples_used: usize,
    /// Set when retrieval was forced regardless of `value` (gate disabled).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
}

/// Monte-Carlo estimate of the output entropy for `prompt`: the mean of
/// `-total_logprob` over `config.n_samples` draws.
pub fn estimate_entropy(
    backend: &dyn GeneratorBackend,
    prompt: &str,
    config: &ConfidenceConfig,
) -> Result<f64> {
    if config.n_samples < 2 {
        return Err(Error::precondition(
            "entropy estimation needs n_samples >= 2",
        ));
    }
    let samples = generator::sample(backend, prompt, &config.sampling_params())?;
    let total: f64 = samples.iter().map(|s| -s.total_logprob).sum();
    Ok((total / samples.len() as f64).max(0.0))
}

/// Applies the configured criterion and its threshold rule.
pub fn gate(
    backend: &dyn GeneratorBackend,
    example_id: &str,
    prompt: &str,
    config: &ConfidenceConfig,
) -> Result<ConfidenceReport> {
    config.validate()?;
    let (value, needs_retrieval, samples_used) = match config.criterion {
        Criterion::Entropy => {
            let h = estimate_entropy(backend, prompt, config)?;
            (h, h > config.entropy_threshold, config.n_samples)
        }
        Criterion::Loss => {
            let greedy = generator::generate_greedy(backend, prompt, config.sampling.max_tokens)?;
            let loss = generator::mean_nll(backend, prompt, &greedy.text)?;
            (loss, loss > config.loss_threshold, 1)
        }
        Criterion::SamplePrompt => {
            let check = sample_prompt_verdict(backend, prompt, &config.sampling)?;
            (check.margin(), !check.is_true(), 1 + BRAINSTORMED)
        }
    };
    Ok(ConfidenceReport {
        example_id: example_id.to_string(),
        criterion: config.criterion,
        value,
        threshold: config.threshold(),
        needs_retrieval,
        samples_used,
        forced: false,
    })
}

/// Renders the True/False self-check prompt.
pub fn render_self_check_prompt(question: &str, possible_answer: &str, ideas: &[String]) -> String {
    let mut lines = vec![
        format!("Question: {question}"),
        format!("Possible Answer: {possible_answer}"),
        "Here are some brainstormed ideas:".to_string(),
    ];
    lines.extend(ideas.iter().cloned());
    lines.push("Is the possible answer:".to_string());
    lines.push(TRUE_OPTION.to_string());
    lines.push(FALSE_OPTION.to_string());
    lines.push("The possible answer is:".to_string());
    lines.join("\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub possible_answer: String,
    pub ideas: Vec<String>,
    pub prompt: String,
    pub true_logprob: f64,
    pub false_logprob: f64,
}

impl SelfCheck {
    /// True only when "(A) True" strictly outscores "(B) False".
    pub fn is_true(&self) -> bool {
        self.true_logprob > self.false_logprob
    }

    pub fn margin(&self) -> f64 {
        self.true_logprob - self.false_logprob
    }
}

/// Sample-enhanced self-evaluation. The greedy output is the possible
/// answer; four further samples (at `params.temperature`, or 1.0 when that
/// is zero) are listed as brainstormed ideas.
pub fn sample_prompt_verdict(
    backend: &dyn GeneratorBackend,
    question: &str,
    params: &SamplingParams,
) -> Result<SelfCheck> {
    let greedy = generator::generate_greedy(backend, question, params.max_tokens)?;
    let diverse = SamplingParams {
        n_samples: BRAINSTORMED,
        temperature: if params.temperature > 0.0 {
            params.temperature
        } else {
            1.0
        },
        ..params.clone()
    };
    let ideas: Vec<String> = generator::sample(backend, question, &diverse)?
        .into_iter()
        .map(|s| s.text)
        .collect();
    let prompt = render_self_check_prompt(question, &greedy.text, &ideas);
    let true_logprob = generator::score(backend, &prompt, TRUE_OPTION)?.total_logprob;
    let false_logprob = generator::score(backend, &prompt, FALSE_OPTION)?.total_logprob;
    Ok(SelfCheck {
        possible_answer: greedy.text,
        ideas,
        prompt,
        true_logprob,
        false_logprob,
    })
}
