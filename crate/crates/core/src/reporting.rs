//! Diagnostic reports over run traces: entropy histograms split by
//! correctness, and parameter sweeps. Everything is written as CSV plus an
//! aligned text table under `{output_dir}/reports/`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{read_traces, run_batch, ExampleTrace, RunConfig, TRACES_FILE};
use crate::retrieval::RankWindow;

pub const HISTOGRAM_BINS: usize = 20;
/// Examples scoring at least this are counted as correct.
pub const CORRECT_THRESHOLD: f64 = 0.5;
pub const REPORTS_DIR: &str = "reports";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    /// `HISTOGRAM_BINS + 1` edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
    pub mean_correct: Option<f64>,
    pub mean_incorrect: Option<f64>,
}

/// Bins closed-book confidence values of all traces that were gated,
/// separately for correct and incorrect predictions. A range of zero width
/// uses bins of width 1/20 starting at the single value.
pub fn entropy_histogram(traces: &[ExampleTrace]) -> Result<EntropyHistogram> {
    let points: Vec<(f64, bool)> = traces
        .iter()
        .filter_map(|t| {
            t.confidence
                .as_ref()
                .map(|c| (c.value, t.score() >= CORRECT_THRESHOLD))
        })
        .collect();
    if points.is_empty() {
        return Err(Error::precondition("no gated traces to histogram"));
    }
    let min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min {
        (max - min) / HISTOGRAM_BINS as f64
    } else {
        1.0 / HISTOGRAM_BINS as f64
    };
    let mut edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| min + i as f64 * width)
        .collect();
    if max > min {
        edges[HISTOGRAM_BINS] = max;
    }
    let mut correct = vec![0; HISTOGRAM_BINS];
    let mut incorrect = vec![0; HISTOGRAM_BINS];
    for &(v, ok) in &points {
        let bin = (((v - min) / width) as usize).min(HISTOGRAM_BINS - 1);
        if ok {
            correct[bin] += 1;
        } else {
            incorrect[bin] += 1;
        }
    }
    let mean = |want: bool| {
        let vs: Vec<f64> = points.iter().filter(|p| p.1 == want).map(|p| p.0).collect();
        (!vs.is_empty()).then(|| vs.iter().sum::<f64>() / vs.len() as f64)
    };
    Ok(EntropyHistogram {
        edges,
        correct,
        incorrect,
        mean_correct: mean(true),
        mean_incorrect: mean(false),
    })
}

impl EntropyHistogram {
    pub fn total(&self) -> usize {
        self.correct.iter().chain(&self.incorrect).sum()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        write_record(&mut w, ["bin_start", "bin_end", "correct", "incorrect"])?;
        for i in 0..self.correct.len() {
            write_record(
                &mut w,
                [
                    format!("{:.6}", self.edges[i]),
                    format!("{:.6}", self.edges[i + 1]),
                    self.correct[i].to_string(),
                    self.incorrect[i].to_string(),
                ],
            )?;
        }
        finish_csv(w)
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = (0..self.correct.len())
            .map(|i| {
                vec![
                    format!(
                        "[{:.3}, {:.3}{}",
                        self.edges[i],
                        self.edges[i + 1],
                        if i + 1 == self.correct.len() {
                            "]"
                        } else {
                            ")"
                        }
                    ),
                    self.correct[i].to_string(),
                    self.incorrect[i].to_string(),
                ]
            })
            .collect();
        let mut out = text_table(&["entropy", "correct", "incorrect"], &rows);
        let fmt = |m: Option<f64>| m.map_or("-".to_string(), |v| format!("{v:.4}"));
        out.push_str(&format!(
            "mean entropy: correct {}, incorrect {}\n",
            fmt(self.mean_correct),
            fmt(self.mean_incorrect)
        ));
        out
    }

    /// Writes `entropy_histogram.{csv,txt,json}` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("entropy_histogram.csv"), &self.to_csv()?)?;
        write_file(&dir.join("entropy_histogram.txt"), &self.to_table())?;
        write_file(
            &dir.join("entropy_histogram.json"),
            &serde_json::to_string_pretty(self)?,
        )
    }
}

/// Parameter and values of a sweep, e.g. `{"parameter": "eta", "values": [0, 4, inf]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameter", content = "values", rename_all = "snake_case")]
pub enum SweepSpec {
    Eta(Vec<f64>),
    TopKBand(Vec<RankWindow>),
    NSamples(Vec<usize>),
}

impl SweepSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SweepSpec::Eta(_) => "eta",
            SweepSpec::TopKBand(_) => "top_k_band",
            SweepSpec::NSamples(_) => "n_samples",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepSpec::Eta(v) => v.len(),
            SweepSpec::TopKBand(v) => v.len(),
            SweepSpec::NSamples(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SweepSpec = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("sweep {}: {m}", self.name())));
        if self.is_empty() {
            return bad("needs at least one value");
        }
        match self {
            SweepSpec::Eta(v) => {
                if v.iter().any(|x| x.is_nan()) || v.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("values must be strictly increasing");
                }
            }
            SweepSpec::NSamples(v) => {
                if v.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("values must be strictly increasing");
                }
            }
            SweepSpec::TopKBand(v) => {
                if v.iter().any(|b| b.start == 0 || b.start > b.end) {
                    return bad("bands must satisfy 1 <= start <= end");
                }
                if v.windows(2).any(|w| w[1].start <= w[0].end) {
                    return bad("bands must be disjoint and increasing");
                }
            }
        }
        Ok(())
    }

    fn label(&self, i: usize) -> String {
        match self {
            SweepSpec::Eta(v) => format_eta(v[i]),
            SweepSpec::TopKBand(v) => format!("{}-{}", v[i].start, v[i].end),
            SweepSpec::NSamples(v) => v[i].to_string(),
        }
    }

    /// `base` with the i-th value applied and its own output directory.
    fn row_config(&self, i: usize, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match self {
            SweepSpec::Eta(v) => {
                // JSON has no infinity; f64::MAX behaves the same under `h > eta`.
                c.confidence.entropy_threshold = if v[i].is_infinite() && v[i] > 0.0 {
                    f64::MAX
                } else {
                    v[i]
                };
                c.task_thresholds.clear();
            }
            SweepSpec::TopKBand(v) => c.retrieval.rank_window = Some(v[i]),
            SweepSpec::NSamples(v) => c.confidence.n_samples = v[i],
        }
        c.output_dir = base
            .output_dir
            .join("sweeps")
            .join(self.name())
            .join(format!("{i:02}_{}", self.label(i)));
        c
    }
}

fn format_eta(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    /// Mean per-example metric value over all tasks, failures counted as 0.
    pub accuracy: Option<f64>,
    pub retrieval_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One full batch run per value. Each finished row is saved under
/// `reports/sweep_{parameter}/` and reused by later invocations, so an
/// interrupted sweep picks up where it stopped. A failing row is recorded
/// and the sweep moves on.
pub fn run_sweep(spec: &SweepSpec, base: &RunConfig, parallel_rows: bool) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    base.validate()?;
    let reports = base.output_dir.join(REPORTS_DIR);
    let rows_dir = reports.join(format!("sweep_{}", spec.name()));
    fs::create_dir_all(&rows_dir).map_err(|e| Error::io(&rows_dir, e))?;

    let run_row = |i: usize| -> SweepRow {
        let label = spec.label(i);
        let saved = rows_dir.join(format!("row_{i:02}.json"));
        if let Some(row) = load_row(&saved, &label) {
            return row;
        }
        let row = match sweep_row(&spec.row_config(i, base)) {
            Ok((accuracy, rate)) => SweepRow {
                value: label,
                accuracy: Some(accuracy),
                retrieval_rate: Some(rate),
                error: None,
            },
            Err(e) => {
                tracing::warn!(row = i, error = %e, "sweep row failed");
                SweepRow {
                    value: label,
                    accuracy: None,
                    retrieval_rate: None,
                    error: Some(e.to_string()),
                }
            }
        };
        if row.error.is_none() {
            if let Err(e) = serde_json::to_string_pretty(&row)
                .map_err(Error::from)
                .and_then(|s| write_file(&saved, &s))
            {
                tracing::warn!(error = %e, "could not save sweep row");
            }
        }
        row
    };
    let rows: Vec<SweepRow> = if parallel_rows {
        (0..spec.len()).into_par_iter().map(run_row).collect()
    } else {
        (0..spec.len()).map(run_row).collect()
    };

    write_file(
        &reports.join(format!("sweep_{}.csv", spec.name())),
        &sweep_csv(spec.name(), &rows)?,
    )?;
    write_file(
        &reports.join(format!("sweep_{}.txt", spec.name())),
        &sweep_table(spec.name(), &rows),
    )?;
    Ok(rows)
}

fn load_row(path: &Path, label: &str) -> Option<SweepRow> {
    let row: SweepRow = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
    (row.value == label && row.error.is_none()).then_some(row)
}

fn sweep_row(config: &RunConfig) -> Result<(f64, f64)> {
    let summary = run_batch(config, false)?;
    let traces = read_traces(&config.output_dir.join(TRACES_FILE))?;
    if traces.is_empty() {
        return Err(Error::precondition("sweep row produced no traces"));
    }
    let accuracy = traces.iter().map(ExampleTrace::score).sum::<f64>() / traces.len() as f64;
    Ok((accuracy, summary.retrieval_rate))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

pub fn sweep_csv(parameter: &str, rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_record(&mut w, [parameter, "accuracy", "retrieval_rate", "error"])?;
    for r in rows {
        write_record(
            &mut w,
            [
                r.value.clone(),
                fmt_opt(r.accuracy),
                fmt_opt(r.retrieval_rate),
                r.error.clone().unwrap_or_default(),
            ],
        )?;
    }
    finish_csv(w)
}

pub fn sweep_table(parameter: &str, rows: &[SweepRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.value.clone(),
                r.accuracy
                    .map_or("failed".into(), |a| format!("{:.2}", 100.0 * a)),
                r.retrieval_rate
                    .map_or("-".into(), |x| format!("{:.2}", 100.0 * x)),
            ]
        })
        .collect();
    text_table(&[parameter, "accuracy", "retrieval %"], &cells)
}

/// Left-aligned first column, right-aligned rest, two-space gutters.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let s: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        format!("{}\n", s.join("  ").trim_end())
    };
    let mut out = line(header.to_vec());
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn write_record<I, S>(w: &mut csv::Writer<Vec<u8>>, record: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(record)
        .map_err(|e| Error::precondition(format!("csv: {e}")))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::precondition(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// `{output_dir}/reports`.
pub fn reports_dir(config: &RunConfig) -> PathBuf {
    config.output_dir.join(REPORTS_DIR)
}
