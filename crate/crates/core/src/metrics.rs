//! Answer normalization, EM, token F1, ROUGE-L and accuracy.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unification::Family;

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn require_golds(golds: &[impl AsRef<str>]) -> Result<()> {
    if golds.is_empty() {
        return Err(Error::precondition("gold list must be non-empty"));
    }
    Ok(())
}

fn max_over<G: AsRef<str>>(golds: &[G], f: impl Fn(&str) -> f64) -> Result<f64> {
    require_golds(golds)?;
    Ok(golds.iter().map(|g| f(g.as_ref())).fold(0.0, f64::max))
}

pub fn exact_match<G: AsRef<str>>(prediction: &str, golds: &[G]) -> Result<f64> {
    let p = normalize_answer(prediction);
    max_over(golds, |g| f64::from(u8::from(normalize_answer(g) == p)))
}

fn f_measure(overlap: usize, pred_len: usize, gold_len: usize) -> f64 {
    match (pred_len, gold_len) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ if overlap == 0 => 0.0,
        _ => {
            let p = overlap as f64 / pred_len as f64;
            let r = overlap as f64 / gold_len as f64;
            2.0 * p * r / (p + r)
        }
    }
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f_measure(overlap, pred.len(), gold.len())
}

/// Bag-of-tokens F1 after normalization.
pub fn token_f1<G: AsRef<str>>(prediction: &str, golds: &[G]) -> Result<f64> {
    let p = normalized_tokens(prediction);
    max_over(golds, |g| f1_tokens(&p, &normalized_tokens(g)))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Token-level LCS F-measure with beta = 1.
pub fn rouge_l<G: AsRef<str>>(prediction: &str, golds: &[G]) -> Result<f64> {
    let p = normalized_tokens(prediction);
    max_over(golds, |g| {
        let g = normalized_tokens(g);
        f_measure(lcs_len(&p, &g), p.len(), g.len())
    })
}

/// Index of the option closest to `prediction` by token F1; ties go to the
/// lowest index.
pub fn resolve_option<O: AsRef<str>>(prediction: &str, options: &[O]) -> Option<usize> {
    let p = normalized_tokens(prediction);
    let mut best: Option<(usize, f64)> = None;
    for (i, o) in options.iter().enumerate() {
        let f = f1_tokens(&p, &normalized_tokens(o.as_ref()));
        if best.is_none_or(|(_, b)| f > b) {
            best = Some((i, f));
        }
    }
    best.map(|(i, _)| i)
}

/// Exact match after snapping the prediction to the nearest option.
pub fn accuracy<G: AsRef<str>, O: AsRef<str>>(
    prediction: &str,
    golds: &[G],
    options: &[O],
) -> Result<f64> {
    require_golds(golds)?;
    match resolve_option(prediction, options) {
        Some(i) => exact_match(options[i].as_ref(), golds),
        None => exact_match(prediction, golds),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Em,
    F1,
    RougeL,
    Accuracy,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Em => "em",
            Metric::F1 => "f1",
            Metric::RougeL => "rouge_l",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn default_for(family: Family) -> Metric {
        match family {
            Family::OpenDomainQa => Metric::Em,
            Family::Dialogue => Metric::F1,
            _ => Metric::Accuracy,
        }
    }

    pub fn score<G: AsRef<str>, O: AsRef<str>>(
        self,
        prediction: &str,
        golds: &[G],
        options: &[O],
    ) -> Result<f64> {
        match self {
            Metric::Em => exact_match(prediction, golds),
            Metric::F1 => token_f1(prediction, golds),
            Metric::RougeL => rouge_l(prediction, golds),
            Metric::Accuracy => accuracy(prediction, golds, options),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(Metric::Em),
            "f1" => Ok(Metric::F1),
            "rouge_l" | "rouge-l" => Ok(Metric::RougeL),
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            _ => Err(Error::InvalidConfig(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metric: Metric,
    pub value: f64,
    #[serde(rename = "n")]
    pub n_examples: usize,
    pub per_example: Vec<f64>,
}

impl MetricReport {
    pub fn new(task: impl Into<String>, metric: Metric, per_example: Vec<f64>) -> Result<Self> {
        if per_example.is_empty() {
            return Err(Error::precondition(
                "metric report needs at least one example",
            ));
        }
        let value = per_example.iter().sum::<f64>() / per_example.len() as f64;
        Ok(MetricReport {
            task: task.into(),
            metric,
            value,
            n_examples: per_example.len(),
            per_example,
        })
    }
}

/// Renders rows of reports as a text table with one column per task.
/// Values are percentages with two decimals; missing cells print `-`.
pub fn render_table(rows: &[(String, Vec<MetricReport>)]) -> String {
    let tasks: BTreeSet<&str> = rows
        .iter()
        .flat_map(|(_, rs)| rs.iter().map(|r| r.task.as_str()))
        .collect();
    let mut metric_of: HashMap<&str, Metric> = HashMap::new();
    for (_, rs) in rows {
        for r in rs {
            metric_of.entry(&r.task).or_insert(r.metric);
        }
    }
    let mut grid: Vec<Vec<String>> = Vec::with_capacity(rows.len() + 2);
    let mut header = vec!["".to_string()];
    header.extend(tasks.iter().map(|t| t.to_string()));
    grid.push(header);
    let mut metric_row = vec!["metric".to_string()];
    metric_row.extend(tasks.iter().map(|t| metric_of[t].to_string()));
    grid.push(metric_row);
    for (label, rs) in rows {
        let mut line = vec![label.clone()];
        for t in &tasks {
            line.push(match rs.iter().find(|r| r.task == *t) {
                Some(r) => format!("{:.2}", 100.0 * r.value),
                None => "-".to_string(),
            });
        }
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in grid.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| {
                if c == 0 {
                    format!("{s:<w$}")
                } else {
                    format!("{s:>w$}")
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 1 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}
