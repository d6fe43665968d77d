//! Unified text-to-text format for the seven task families, and
//! temperature-scaled multi-task mixing.
//!
//! Rendered prompt layout, lines joined by `"\n"`:
//!
//! ```text
//! Context: {p1} {p2} ... {pk}          (omitted when there are no passages)
//! {Instruction}: {input}
//! Option 1: {o1} Option 2: {o2} ...    (omitted when there are no options)
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::jsonl::{self, Loaded};

pub const MAX_PASSAGES: usize = 10;
pub const MAX_OPTIONS: usize = 26;
pub const SLOT_SEPARATOR: &str = " [SEP] ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FactChecking,
    SlotFilling,
    Dialogue,
    OpenDomainQa,
    CommonsenseQa,
    CommonsenseReasoning,
    Nli,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::FactChecking,
        Family::SlotFilling,
        Family::Dialogue,
        Family::OpenDomainQa,
        Family::CommonsenseQa,
        Family::CommonsenseReasoning,
        Family::Nli,
    ];

    pub fn instruction(self) -> &'static str {
        match self {
            Family::FactChecking => "Verify the following claim",
            Family::SlotFilling => "Predict the missing fact",
            Family::OpenDomainQa | Family::CommonsenseQa => "Answer the following question",
            Family::Dialogue => "Response to the following dialogue",
            Family::Nli => "Inference on the following context",
            Family::CommonsenseReasoning => "Reason about the following sentence",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::FactChecking => "fact_checking",
            Family::SlotFilling => "slot_filling",
            Family::Dialogue => "dialogue",
            Family::OpenDomainQa => "open_domain_qa",
            Family::CommonsenseQa => "commonsense_qa",
            Family::CommonsenseReasoning => "commonsense_reasoning",
            Family::Nli => "nli",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub example_id: String,
    pub task: String,
    pub family: Family,
    pub input_text: String,
    #[serde(default)]
    pub options: Vec<String>,
    pub gold_outputs: Vec<String>,
}

impl TaskExample {
    pub fn validate(&self) -> Result<()> {
        if self.example_id.is_empty() {
            return Err(Error::precondition("example_id must be non-empty"));
        }
        if self.gold_outputs.is_empty() {
            return Err(Error::precondition(format!(
                "example {:?} has no gold outputs",
                self.example_id
            )));
        }
        if self.family == Family::SlotFilling && !self.input_text.contains(SLOT_SEPARATOR) {
            return Err(Error::precondition(format!(
                "slot filling input must look like \"subject [SEP] relation\", got {:?}",
                self.input_text
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub passage_count: usize,
    pub option_count: usize,
}

/// Lays out the example and its evidence passages (in rank order).
pub fn render_prompt(example: &TaskExample, passages: &[Passage]) -> Result<RenderedPrompt> {
    render_parts(
        example.family,
        &example.input_text,
        passages.iter().map(|p| p.text.as_str()),
        &example.options,
    )
}

/// [`render_prompt`] over raw parts.
pub fn render_parts<'a>(
    family: Family,
    input_text: &str,
    passages: impl IntoIterator<Item = &'a str>,
    options: &[String],
) -> Result<RenderedPrompt> {
    let passages: Vec<&str> = passages.into_iter().collect();
    if passages.len() > MAX_PASSAGES {
        return Err(Error::precondition(format!(
            "at most {MAX_PASSAGES} passages fit in a prompt, got {}",
            passages.len()
        )));
    }
    if options.len() > MAX_OPTIONS {
        return Err(Error::precondition(format!(
            "at most {MAX_OPTIONS} options, got {}",
            options.len()
        )));
    }
    let mut lines = Vec::with_capacity(3);
    if !passages.is_empty() {
        lines.push(format!("Context: {}", passages.join(" ")));
    }
    lines.push(format!("{}: {}", family.instruction(), input_text));
    if !options.is_empty() {
        let rendered: Vec<String> = options
            .iter()
            .enumerate()
            .map(|(i, o)| format!("Option {}: {}", i + 1, o))
            .collect();
        lines.push(rendered.join(" "));
    }
    Ok(RenderedPrompt {
        text: lines.join("\n"),
        passage_count: passages.len(),
        option_count: options.len(),
    })
}

/// The pieces recovered from a rendered prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPrompt {
    /// The space-joined passage texts.
    pub context: Option<String>,
    pub family_instruction: String,
    pub input_text: String,
    pub options: Vec<String>,
}

/// Inverse of [`render_prompt`] for inputs without newlines. Passage
/// boundaries are not recoverable (passages are joined by single spaces);
/// option boundaries are, as long as option texts do not themselves
/// contain `"Option {n}: "` markers.
pub fn parse_prompt(text: &str) -> Option<ParsedPrompt> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    let context = match lines.first() {
        Some(l) if l.starts_with("Context: ") => {
            let c = l["Context: ".len()..].to_string();
            lines.remove(0);
            Some(c)
        }
        _ => None,
    };
    let (instruction_line, option_line) = match lines.as_slice() {
        [i] => (*i, None),
        [i, o] => (*i, Some(*o)),
        _ => return None,
    };
    let family_instruction = Family::ALL
        .iter()
        .map(|f| f.instruction())
        .find(|ins| instruction_line.starts_with(&format!("{ins}: ")))?;
    let input_text = instruction_line[family_instruction.len() + 2..].to_string();
    let options = match option_line {
        None => Vec::new(),
        Some(line) => split_options(line)?,
    };
    Some(ParsedPrompt {
        context,
        family_instruction: family_instruction.to_string(),
        input_text,
        options,
    })
}

fn split_options(line: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    let mut rest = line.strip_prefix("Option 1: ")?;
    let mut n = 2;
    loop {
        let marker = format!(" Option {n}: ");
        match rest.find(&marker) {
            Some(pos) => {
                out.push(rest[..pos].to_string());
                rest = &rest[pos + marker.len()..];
                n += 1;
            }
            None => {
                out.push(rest.to_string());
                return Some(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingConfig {
    pub temperature: f64,
    pub size_cap: Option<u64>,
    pub seed: u64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig {
            temperature: 2.0,
            size_cap: None,
            seed: 0,
        }
    }
}

/// `rate_t = e_t^(1/T) / sum_u e_u^(1/T)` with `e_t = min(size_t, size_cap)`.
pub fn mixing_rates(
    task_sizes: &BTreeMap<String, u64>,
    config: &MixingConfig,
) -> Result<BTreeMap<String, f64>> {
    if task_sizes.is_empty() {
        return Err(Error::precondition("need at least one task"));
    }
    if config.temperature.is_nan() || config.temperature <= 0.0 {
        return Err(Error::InvalidConfig(
            "mixing temperature must be > 0".into(),
        ));
    }
    if let Some((task, _)) = task_sizes.iter().find(|(_, &n)| n == 0) {
        return Err(Error::precondition(format!("task {task:?} is empty")));
    }
    let weights: Vec<(&String, f64)> = task_sizes
        .iter()
        .map(|(t, &n)| {
            let effective = config.size_cap.map_or(n, |cap| n.min(cap)) as f64;
            (t, effective.powf(1.0 / config.temperature))
        })
        .collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    Ok(weights
        .into_iter()
        .map(|(t, w)| (t.clone(), w / total))
        .collect())
}

/// Draws `n` examples i.i.d.: a task by mixing rate, then an example
/// uniformly within it.
pub fn sample_mixture(
    datasets: &BTreeMap<String, Vec<TaskExample>>,
    config: &MixingConfig,
    n: usize,
) -> Result<Vec<TaskExample>> {
    let sizes: BTreeMap<String, u64> = datasets
        .iter()
        .map(|(t, xs)| (t.clone(), xs.len() as u64))
        .collect();
    let rates = mixing_rates(&sizes, config)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let tasks: Vec<&Vec<TaskExample>> = datasets.values().collect();
    let picker = WeightedIndex::new(rates.values().copied())
        .map_err(|e| Error::InvalidConfig(format!("mixing rates: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..n)
        .map(|_| {
            let pool = tasks[picker.sample(&mut rng)];
            pool[rng.random_range(0..pool.len())].clone()
        })
        .collect())
}

#[derive(Deserialize)]
struct TaskRecord {
    id: Option<String>,
    task: Option<String>,
    family: Option<String>,
    input: Option<String>,
    #[serde(default)]
    options: Vec<String>,
    outputs: Option<Vec<String>>,
}

/// Reads a task JSONL file. `task` and `family` fill in records that omit
/// them. Invalid records are reported with their line and skipped.
pub fn load_task_file(
    path: &Path,
    task: Option<&str>,
    family: Option<Family>,
) -> Result<Loaded<TaskExample>> {
    let mut loaded = Loaded::default();
    for item in jsonl::records::<TaskRecord>(path)? {
        let (line, rec) = match item {
            Ok(x) => x,
            Err(e @ Error::Record { .. }) => {
                loaded.errors.push(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        match task_from_record(rec, task, family) {
            Ok(ex) => loaded.records.push(ex),
            Err(e) => loaded.errors.push(Error::Record {
                line,
                message: e.to_string(),
            }),
        }
    }
    Ok(loaded)
}

fn task_from_record(
    rec: TaskRecord,
    task: Option<&str>,
    family: Option<Family>,
) -> Result<TaskExample> {
    let missing = |f: &str| Error::precondition(format!("missing field {f:?}"));
    let family = match rec.family {
        Some(f) => f.parse()?,
        None => family.ok_or_else(|| missing("family"))?,
    };
    let example = TaskExample {
        example_id: rec.id.ok_or_else(|| missing("id"))?,
        task: rec
            .task
            .or_else(|| task.map(str::to_owned))
            .ok_or_else(|| missing("task"))?,
        family,
        input_text: rec.input.ok_or_else(|| missing("input"))?,
        options: rec.options,
        gold_outputs: rec.outputs.ok_or_else(|| missing("outputs"))?,
    };
    example.validate()?;
    Ok(example)
}

/// One example in the task JSONL shape read by [`load_task_file`].
pub fn task_record(e: &TaskExample) -> serde_json::Value {
    serde_json::json!({
        "id": e.example_id,
        "task": e.task,
        "family": e.family,
        "input": e.input_text,
        "options": e.options,
        "outputs": e.gold_outputs,
    })
}

/// Serializes examples back to the task JSONL shape.
pub fn write_task_file(path: &Path, examples: &[TaskExample]) -> Result<()> {
    jsonl::write(path, examples.iter().map(task_record))
}
