use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceReport;
use crate::error::Result;
use crate::filter::EvidenceSet;
use crate::jsonl;
use crate::metrics::Metric;
use crate::retrieval::{ScoredPassage, SearchResult};
use crate::unification::{Family, RenderedPrompt};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gate,
    Retrieve,
    Stage1,
    Stage2,
    Render,
    Generate,
    Score,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Gate => "gate",
            Stage::Retrieve => "retrieve",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Render => "render",
            Stage::Generate => "generate",
            Stage::Score => "score",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", content = "results", rename_all = "snake_case")]
pub enum Retrieved {
    #[default]
    None,
    Index(Vec<ScoredPassage>),
    Web(Vec<SearchResult>),
}

impl Retrieved {
    pub fn len(&self) -> usize {
        match self {
            Retrieved::None => 0,
            Retrieved::Index(v) => v.len(),
            Retrieved::Web(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything that happened to one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleTrace {
    pub example_id: String,
    pub task: String,
    pub family: Family,
    pub gold_outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    pub confidence: Option<ConfidenceReport>,
    #[serde(default)]
    pub retrieved: Retrieved,
    pub evidence: Option<EvidenceSet>,
    pub prompt: Option<RenderedPrompt>,
    pub prediction: Option<String>,
    pub metric: Metric,
    pub metric_value: Option<f64>,
    /// Stages completed, in order.
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall-clock milliseconds per stage; kept out of the trace file so
    /// traces stay reproducible.
    #[serde(skip)]
    pub timings: BTreeMap<Stage, f64>,
}

impl ExampleTrace {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn needs_retrieval(&self) -> bool {
        self.confidence.as_ref().is_some_and(|c| c.needs_retrieval)
    }

    /// The metric value, counting failed examples as 0.
    pub fn score(&self) -> f64 {
        self.metric_value.unwrap_or(0.0)
    }

    /// Recomputes the score from the stored prediction.
    pub fn rescore(&self, metric: Metric) -> Result<f64> {
        match &self.prediction {
            Some(p) => metric.score(p, &self.gold_outputs, &self.options),
            None => Ok(0.0),
        }
    }
}

/// One line of `timings.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub example_id: String,
    pub ms: BTreeMap<Stage, f64>,
}

pub fn read_traces(path: &Path) -> Result<Vec<ExampleTrace>> {
    jsonl::records::<ExampleTrace>(path)?
        .map(|r| r.map(|(_, t)| t))
        .collect()
}

pub fn write_traces(path: &Path, traces: &[ExampleTrace]) -> Result<()> {
    jsonl::write(path, traces)
}
