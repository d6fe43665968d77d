//! Per-example orchestration: gate, retrieve, filter, render, generate,
//! score. Batch runs, the CKL corpus builder and run persistence live in
//! [`batch`].

mod batch;
mod config;
mod trace;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

pub use batch::{
    build_ckl_corpus, evaluate_traces, gate_examples, load_examples, run_batch, CklSummary,
    RunSummary, CKL_FILE, METRICS_DIR, SUMMARY_FILE, TIMINGS_FILE, TRACES_FILE,
};
pub use config::{CklConfig, RunConfig, TaskFile, ENV_PREFIX};
pub use trace::{read_traces, write_traces, ExampleTrace, Retrieved, Stage, TimingRecord};

use crate::confidence::{estimate_entropy, gate, ConfidenceConfig, ConfidenceReport, Criterion};
use crate::corpus::{chunk_all, load_corpus, Passage};
use crate::error::{Error, Result};
use crate::filter::{
    split_paragraphs, stage1_select, stage2_select_with_baseline, EvidenceSet, TfIdfEmbedder,
};
use crate::generator::{generate_greedy, GeneratorBackend, HttpGenerator, MockModel};
use crate::http::RetryPolicy;
use crate::retrieval::{
    backend_from_config, query_index, search_web, Backend, FetchStatus, Index, SearchBackend,
};
use crate::unification::{render_prompt, TaskExample};

/// Where evidence comes from.
pub enum Retriever {
    Index(Index),
    Web(Box<dyn SearchBackend>),
}

impl Retriever {
    /// Opens the retriever named by `config.retrieval.backend`. A local
    /// index is loaded from `index_path` when it holds one, otherwise built
    /// from `corpus_path`.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        if config.retrieval.backend != Backend::LocalIndex {
            return Ok(Retriever::Web(backend_from_config(&config.retrieval)?));
        }
        if let Some(dir) = &config.index_path {
            if dir.join("index.json").is_file() {
                return Ok(Retriever::Index(Index::load(dir)?));
            }
        }
        let corpus = config
            .corpus_path
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("no index or corpus to retrieve from".into()))?;
        let index = build_index(corpus, config.passage_size)?;
        if let Some(dir) = &config.index_path {
            index.save(dir)?;
        }
        Ok(Retriever::Index(index))
    }

    /// Searches issued so far; 0 for a local index.
    pub fn calls(&self) -> usize {
        match self {
            Retriever::Index(_) => 0,
            Retriever::Web(b) => b.calls(),
        }
    }
}

/// Chunks a corpus file and indexes the passages. Bad records are logged
/// and skipped.
pub fn build_index(corpus: &Path, passage_size: usize) -> Result<Index> {
    let loaded = load_corpus(corpus)?;
    for e in &loaded.errors {
        tracing::warn!(path = %corpus.display(), error = %e, "skipping corpus record");
    }
    Index::build(chunk_all(&loaded.records, passage_size)?)
}

/// Opens the generator named by `config.generator_endpoint`.
pub fn generator_from_config(config: &RunConfig) -> Result<Arc<dyn GeneratorBackend>> {
    if config.generator_is_http() {
        Ok(Arc::new(HttpGenerator::new(
            &config.generator_endpoint,
            config.max_in_flight,
            RetryPolicy::default(),
        )?))
    } else {
        Ok(Arc::new(MockModel::load(Path::new(
            &config.generator_endpoint,
        ))?))
    }
}

/// Gates `example` on its closed-book prompt with the task's threshold.
/// With the gate disabled the value is still measured but retrieval is
/// forced.
pub fn gate_example(
    backend: &dyn GeneratorBackend,
    config: &RunConfig,
    example: &TaskExample,
) -> Result<ConfidenceReport> {
    let closed = render_prompt(example, &[])?;
    let confidence = config.confidence_for(&example.task);
    let mut report = gate(backend, &example.example_id, &closed.text, &confidence)?;
    if !config.gate_enabled {
        report.needs_retrieval = true;
        report.forced = true;
    }
    Ok(report)
}

pub struct Pipeline {
    config: RunConfig,
    backend: Arc<dyn GeneratorBackend>,
    retriever: Retriever,
}

impl Pipeline {
    pub fn new(
        config: RunConfig,
        backend: Arc<dyn GeneratorBackend>,
        retriever: Retriever,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            backend,
            retriever,
        })
    }

    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let backend = generator_from_config(&config)?;
        let retriever = Retriever::from_config(&config)?;
        Pipeline::new(config, backend, retriever)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    pub fn backend(&self) -> &dyn GeneratorBackend {
        self.backend.as_ref()
    }

    pub fn gate(&self, example: &TaskExample) -> Result<ConfidenceReport> {
        gate_example(self.backend(), &self.config, example)
    }

    /// Runs one example end to end. Failures are recorded in the trace.
    pub fn solve_example(&self, example: &TaskExample) -> ExampleTrace {
        let mut trace = ExampleTrace {
            example_id: example.example_id.clone(),
            task: example.task.clone(),
            family: example.family,
            gold_outputs: example.gold_outputs.clone(),
            options: example.options.clone(),
            confidence: None,
            retrieved: Retrieved::None,
            evidence: None,
            prompt: None,
            prediction: None,
            metric: self.config.metric_for(&example.task, example.family),
            metric_value: None,
            stages: Vec::new(),
            error: None,
            timings: BTreeMap::new(),
        };
        if let Err(e) = self.solve_into(example, &mut trace) {
            tracing::warn!(example = %example.example_id, error = %e, "example failed");
            trace.error = Some(e.to_string());
        }
        trace
    }

    fn solve_into(&self, example: &TaskExample, trace: &mut ExampleTrace) -> Result<()> {
        example.validate()?;
        let report = timed(trace, Stage::Gate, || self.gate(example))?;
        let needs_retrieval = report.needs_retrieval;
        let closed_value = (report.criterion == Criterion::Entropy).then_some(report.value);
        trace.confidence = Some(report);

        let passages = if needs_retrieval {
            let evidence = self.gather_evidence(example, closed_value, trace)?;
            let kept = evidence.passages.clone();
            trace.evidence = Some(evidence);
            kept
        } else {
            Vec::new()
        };

        let prompt = timed(trace, Stage::Render, || render_prompt(example, &passages))?;
        let answer = timed(trace, Stage::Generate, || {
            generate_greedy(self.backend(), &prompt.text, self.config.answer_max_tokens)
        })?;
        trace.prompt = Some(prompt);
        let metric = trace.metric;
        let value = timed(trace, Stage::Score, || {
            metric.score(&answer.text, &example.gold_outputs, &example.options)
        })?;
        trace.prediction = Some(answer.text);
        trace.metric_value = Some(value);
        Ok(())
    }

    fn gather_evidence(
        &self,
        example: &TaskExample,
        closed_entropy: Option<f64>,
        trace: &mut ExampleTrace,
    ) -> Result<EvidenceSet> {
        let retrieval = &self.config.retrieval;
        let query = example.input_text.as_str();
        let (candidates, similarities) = match &self.retriever {
            Retriever::Index(index) => {
                let hits = timed(trace, Stage::Retrieve, || {
                    match query_index(index, query, retrieval) {
                        Err(Error::InvalidQuery(_)) => Ok(Vec::new()),
                        other => other,
                    }
                })?;
                let passages: Vec<Passage> = hits.iter().map(|h| h.passage.clone()).collect();
                let sims = vec![Vec::new(); passages.len()];
                trace.retrieved = Retrieved::Index(hits);
                (passages, sims)
            }
            Retriever::Web(backend) => {
                let results = timed(trace, Stage::Retrieve, || {
                    search_web(backend.as_ref(), retrieval, query)
                })?;
                let selected = timed(trace, Stage::Stage1, || {
                    let mut passages = Vec::new();
                    let mut sims = Vec::new();
                    for r in results.iter().filter(|r| r.fetch_status == FetchStatus::Ok) {
                        let paragraphs = split_paragraphs(&r.cleaned_text);
                        let embedder = TfIdfEmbedder::fit(
                            paragraphs.iter().map(String::as_str).chain([query]),
                        );
                        let s = stage1_select(query, &r.cleaned_text, &embedder)?;
                        let text = s.text.split_whitespace().collect::<Vec<_>>().join(" ");
                        passages.push(Passage::new(r.url.clone(), 0, text));
                        sims.push(s.selected_similarities());
                    }
                    Ok((passages, sims))
                })?;
                trace.retrieved = Retrieved::Web(results);
                selected
            }
        };

        let config = self.config.confidence_for(&example.task);
        let baseline = match closed_entropy {
            Some(h) => h,
            None => estimate_entropy(
                self.backend(),
                &render_prompt(example, &[])?.text,
                &entropy_config(&config),
            )?,
        };
        if candidates.is_empty() {
            tracing::debug!(example = %example.example_id, "retrieval returned nothing");
            trace.stages.push(Stage::Stage2);
            return Ok(EvidenceSet {
                example_id: example.example_id.clone(),
                passages: Vec::new(),
                candidate_ids: Vec::new(),
                stage1_similarities: Vec::new(),
                stage2_entropies: Vec::new(),
                baseline_entropy: baseline,
                fallback: false,
            });
        }
        let mut evidence = timed(trace, Stage::Stage2, || {
            stage2_select_with_baseline(
                self.backend(),
                example,
                &candidates,
                &entropy_config(&config),
                self.config.k_final,
                baseline,
            )
        })?;
        evidence.stage1_similarities = similarities;
        Ok(evidence)
    }
}

/// Stage 2 always measures entropy, whatever the gate criterion.
fn entropy_config(config: &ConfidenceConfig) -> ConfidenceConfig {
    ConfidenceConfig {
        criterion: Criterion::Entropy,
        n_samples: config.n_samples.max(2),
        ..config.clone()
    }
}

fn timed<T>(trace: &mut ExampleTrace, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    trace
        .timings
        .insert(stage, start.elapsed().as_secs_f64() * 1e3);
    trace.stages.push(stage);
    Ok(out)
}
