//! JSON-over-HTTP generator client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{GenerationSample, GeneratorBackend, SamplingParams};
use crate::error::{Error, Result};
use crate::http::{self, Limiter, RetryPolicy};

/// Body of `POST {base}/sample`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub prompt: String,
    pub n: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub seed: Option<u64>,
}

/// Body of `POST {base}/score`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub samples: Vec<WireSample>,
}

/// Sample object on the wire. Log-probs are optional here so that a server
/// omitting them is reported as a contract violation, not a parse error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireSample {
    pub text: String,
    #[serde(default)]
    pub tokens: Option<Vec<String>>,
    #[serde(default)]
    pub token_logprobs: Option<Vec<f64>>,
}

impl From<&GenerationSample> for WireSample {
    fn from(s: &GenerationSample) -> Self {
        WireSample {
            text: s.text.clone(),
            tokens: Some(s.tokens.clone()),
            token_logprobs: Some(s.token_logprobs.clone()),
        }
    }
}

impl TryFrom<WireSample> for GenerationSample {
    type Error = Error;

    fn try_from(w: WireSample) -> Result<Self> {
        let (Some(tokens), Some(lps)) = (w.tokens, w.token_logprobs) else {
            return Err(Error::ContractViolation(format!(
                "sample {:?} is missing tokens or token_logprobs",
                w.text
            )));
        };
        Ok(GenerationSample::new(w.text, tokens, lps))
    }
}

pub struct HttpGenerator {
    sample_url: Url,
    score_url: Url,
    agent: ureq::Agent,
    limiter: Limiter,
    retry: RetryPolicy,
}

impl HttpGenerator {
    pub const DEFAULT_IN_FLIGHT: usize = 8;

    pub fn new(base: &str, max_in_flight: usize, retry: RetryPolicy) -> Result<Self> {
        let mut base = Url::parse(base)
            .map_err(|e| Error::InvalidConfig(format!("bad generator url {base:?}: {e}")))?;
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let join = |p: &str| {
            base.join(p)
                .map_err(|e| Error::InvalidConfig(format!("bad generator url: {e}")))
        };
        Ok(HttpGenerator {
            sample_url: join("sample")?,
            score_url: join("score")?,
            agent: http::agent(Duration::from_secs(120), "webaug"),
            limiter: Limiter::new(max_in_flight),
            retry,
        })
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, url: &Url, body: &B) -> Result<R> {
        let _permit = self.limiter.acquire();
        self.retry.run(|| {
            let mut resp = http::check(self.agent.post(url.as_str()).send_json(body))?;
            resp.body_mut()
                .read_json::<R>()
                .map_err(|e| Error::ContractViolation(format!("malformed response: {e}")))
        })
    }
}

impl GeneratorBackend for HttpGenerator {
    fn sample(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<GenerationSample>> {
        let req = SampleRequest {
            prompt: prompt.to_string(),
            n: params.n_samples,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            seed: params.seed,
        };
        let resp: SampleResponse = self.post(&self.sample_url, &req)?;
        resp.samples
            .into_iter()
            .map(GenerationSample::try_from)
            .collect()
    }

    fn score(&self, prompt: &str, target: &str) -> Result<GenerationSample> {
        let req = ScoreRequest {
            prompt: prompt.to_string(),
            target: target.to_string(),
        };
        let resp: WireSample = self.post(&self.score_url, &req)?;
        resp.try_into()
    }
}
