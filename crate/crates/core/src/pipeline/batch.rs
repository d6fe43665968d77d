use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gate_example, ExampleTrace, Pipeline, Retrieved, RunConfig, TimingRecord};
use crate::ckl::{mask_all, CklRecord, EntityTagger, Gazetteer};
use crate::confidence::{ConfidenceReport, Criterion};
use crate::corpus::{chunk, Document, Passage};
use crate::error::{Error, Result};
use crate::generator::GeneratorBackend;
use crate::jsonl::{self, Loaded};
use crate::metrics::{Metric, MetricReport};
use crate::retrieval::FetchStatus;
use crate::unification::{load_task_file, TaskExample};

pub const TRACES_FILE: &str = "traces.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_DIR: &str = "metrics";
pub const CKL_FILE: &str = "ckl.jsonl";

const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub examples: usize,
    pub retrieved: usize,
    pub skipped: usize,
    pub failed: usize,
    pub retrieval_rate: f64,
    /// Mean closed-book entropy over examples gated by entropy.
    pub mean_entropy: Option<f64>,
    /// Searches issued by this invocation.
    pub search_calls: usize,
    /// Task records rejected while loading.
    pub invalid_records: usize,
    /// Examples carried over from a previous run by `resume`.
    pub resumed: usize,
    /// Task name to metric value.
    pub metrics: BTreeMap<String, f64>,
}

/// Loads every configured task file. Invalid records are logged and
/// returned as errors; duplicate example ids abort.
pub fn load_examples(config: &RunConfig) -> Result<Loaded<TaskExample>> {
    let mut all = Loaded::default();
    for tf in &config.task_files {
        let loaded = load_task_file(tf.path(), tf.task(), tf.family())?;
        for e in &loaded.errors {
            tracing::warn!(path = %tf.path().display(), error = %e, "skipping task record");
        }
        all.records.extend(loaded.records);
        all.errors.extend(loaded.errors);
    }
    let mut seen = BTreeSet::new();
    for ex in &all.records {
        if !seen.insert(ex.example_id.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate example id {:?}",
                ex.example_id
            )));
        }
    }
    Ok(all)
}

/// Runs every configured example and writes traces, timings, per-task
/// metric reports and the summary under `config.output_dir`. With `resume`,
/// examples already traced without error are kept and not rerun.
pub fn run_batch(config: &RunConfig, resume: bool) -> Result<RunSummary> {
    config.validate()?;
    config.check_paths()?;
    let loaded = load_examples(config)?;
    let pipeline = Pipeline::from_config(config.clone())?;
    run_examples(&pipeline, loaded.records, loaded.errors.len(), resume)
}

/// [`run_batch`] over an already built pipeline.
pub fn run_examples(
    pipeline: &Pipeline,
    examples: Vec<TaskExample>,
    invalid_records: usize,
    resume: bool,
) -> Result<RunSummary> {
    let config = pipeline.config();
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let traces_path = out.join(TRACES_FILE);

    let mut previous: Vec<ExampleTrace> = if resume && traces_path.is_file() {
        super::read_traces(&traces_path)?
            .into_iter()
            .filter(|t| !t.failed())
            .collect()
    } else {
        Vec::new()
    };
    let wanted: BTreeSet<&str> = examples.iter().map(|e| e.example_id.as_str()).collect();
    previous.retain(|t| wanted.contains(t.example_id.as_str()));
    let done: BTreeSet<String> = previous.iter().map(|t| t.example_id.clone()).collect();
    let mut todo: Vec<TaskExample> = examples
        .into_iter()
        .filter(|e| !done.contains(&e.example_id))
        .collect();
    todo.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let resumed = previous.len();

    jsonl::write(&traces_path, &previous)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let calls_before = pipeline.retriever().calls();
    let mut fresh: Vec<ExampleTrace> = Vec::with_capacity(todo.len());
    for batch in todo.chunks(CHUNK) {
        let traces: Vec<ExampleTrace> = pool.install(|| {
            batch
                .par_iter()
                .map(|ex| pipeline.solve_example(ex))
                .collect()
        });
        append_jsonl(&traces_path, &traces)?;
        fresh.extend(traces);
    }
    let search_calls = pipeline.retriever().calls() - calls_before;

    let timings: Vec<TimingRecord> = fresh
        .iter()
        .map(|t| TimingRecord {
            example_id: t.example_id.clone(),
            ms: t.timings.clone(),
        })
        .collect();
    jsonl::write(&out.join(TIMINGS_FILE), &timings)?;

    let mut traces = previous;
    traces.extend(fresh);
    traces.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    super::write_traces(&traces_path, &traces)?;

    let reports = report_by_task(&traces, None)?;
    let metrics_dir = out.join(METRICS_DIR);
    fs::create_dir_all(&metrics_dir).map_err(|e| Error::io(&metrics_dir, e))?;
    for r in &reports {
        write_json(&metrics_dir.join(format!("{}.json", r.task)), r)?;
    }

    let summary = summarize(&traces, &reports, search_calls, invalid_records, resumed);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn summarize(
    traces: &[ExampleTrace],
    reports: &[MetricReport],
    search_calls: usize,
    invalid_records: usize,
    resumed: usize,
) -> RunSummary {
    let retrieved = traces.iter().filter(|t| t.needs_retrieval()).count();
    let failed = traces.iter().filter(|t| t.failed()).count();
    let entropies: Vec<f64> = traces
        .iter()
        .filter_map(|t| t.confidence.as_ref())
        .filter(|c| c.criterion == Criterion::Entropy)
        .map(|c| c.value)
        .collect();
    let gated = traces.iter().filter(|t| t.confidence.is_some()).count();
    RunSummary {
        examples: traces.len(),
        retrieved,
        skipped: gated - retrieved,
        failed,
        retrieval_rate: if gated == 0 {
            0.0
        } else {
            retrieved as f64 / gated as f64
        },
        mean_entropy: (!entropies.is_empty())
            .then(|| entropies.iter().sum::<f64>() / entropies.len() as f64),
        search_calls,
        invalid_records,
        resumed,
        metrics: reports.iter().map(|r| (r.task.clone(), r.value)).collect(),
    }
}

/// Per-task reports recomputed from stored predictions. `metric` overrides
/// the metric recorded in each trace.
pub fn evaluate_traces(
    traces: &[ExampleTrace],
    metric: Option<Metric>,
) -> Result<Vec<MetricReport>> {
    report_by_task(traces, metric)
}

fn report_by_task(traces: &[ExampleTrace], metric: Option<Metric>) -> Result<Vec<MetricReport>> {
    let mut by_task: BTreeMap<&str, Vec<&ExampleTrace>> = BTreeMap::new();
    for t in traces {
        by_task.entry(&t.task).or_default().push(t);
    }
    by_task
        .into_iter()
        .map(|(task, mut ts)| {
            ts.sort_by(|a, b| a.example_id.cmp(&b.example_id));
            let m = metric.unwrap_or(ts[0].metric);
            let per_example = ts
                .iter()
                .map(|t| t.rescore(m))
                .collect::<Result<Vec<f64>>>()?;
            MetricReport::new(task, m, per_example)
        })
        .collect()
}

/// Gates each example without retrieving.
pub fn gate_examples(
    backend: &dyn GeneratorBackend,
    config: &RunConfig,
    examples: &[TaskExample],
) -> Vec<Result<ConfidenceReport>> {
    examples
        .par_iter()
        .map(|ex| gate_example(backend, config, ex))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CklSummary {
    /// Distinct retrieved passages considered.
    pub passages: usize,
    /// Passages with at least one entity, written to the corpus.
    pub records: usize,
    /// Passages without entities.
    pub skipped: usize,
}

/// Masks the passages retrieved for examples that needed retrieval and
/// writes the CKL corpus to `{output_dir}/ckl.jsonl`. Uses the existing
/// trace file when there is one, otherwise runs the batch first.
pub fn build_ckl_corpus(config: &RunConfig) -> Result<CklSummary> {
    config.validate()?;
    let traces_path = config.output_dir.join(TRACES_FILE);
    if !traces_path.is_file() {
        run_batch(config, false)?;
    }
    let traces = super::read_traces(&traces_path)?;
    let tagger = tagger_from_config(config)?;

    let mut passages: BTreeMap<String, Passage> = BTreeMap::new();
    for t in traces.iter().filter(|t| t.needs_retrieval()) {
        for p in retrieved_passages(t, config.passage_size)? {
            passages.entry(p.passage_id.clone()).or_insert(p);
        }
    }
    let passages: Vec<Passage> = passages.into_values().collect();
    let masked = mask_all(&passages, &tagger)?;
    let records: Vec<CklRecord> = masked
        .iter()
        .filter(|m| m.entity_count > 0)
        .map(CklRecord::from)
        .collect();
    jsonl::write(&config.output_dir.join(CKL_FILE), &records)?;
    Ok(CklSummary {
        passages: passages.len(),
        records: records.len(),
        skipped: passages.len() - records.len(),
    })
}

fn retrieved_passages(trace: &ExampleTrace, passage_size: usize) -> Result<Vec<Passage>> {
    match &trace.retrieved {
        Retrieved::None => Ok(Vec::new()),
        Retrieved::Index(hits) => Ok(hits.iter().map(|h| h.passage.clone()).collect()),
        Retrieved::Web(results) => {
            let mut out = Vec::new();
            for r in results.iter().filter(|r| r.fetch_status == FetchStatus::Ok) {
                out.extend(chunk(
                    &Document::new(r.url.clone(), r.cleaned_text.clone())?,
                    passage_size,
                )?);
            }
            Ok(out)
        }
    }
}

pub fn tagger_from_config(config: &RunConfig) -> Result<EntityTagger> {
    if let Some(path) = &config.ckl.tagged_spans {
        return EntityTagger::load_external(path);
    }
    let mut entries = config.ckl.gazetteer.clone();
    if let Some(path) = &config.ckl.gazetteer_path {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        entries.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned),
        );
    }
    Ok(EntityTagger::Gazetteer(Gazetteer::new(entries)?))
}

fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
