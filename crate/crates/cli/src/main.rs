use std::collections::BTreeMap;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use webaug::corpus::DEFAULT_PASSAGE_SIZE;
use webaug::metrics::{render_table, Metric};
use webaug::pipeline::{
    self, build_ckl_corpus, evaluate_traces, gate_examples, generator_from_config, load_examples,
    read_traces, run_batch, RunConfig,
};
use webaug::reporting::{entropy_histogram, reports_dir, run_sweep, sweep_table, SweepSpec};
use webaug::retrieval::Index;
use webaug::unification::{
    load_task_file, mixing_rates, sample_mixture, task_record, write_task_file, Family,
};

#[derive(Parser)]
#[command(
    name = "webaug",
    version,
    about = "Adaptive web-augmented generation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Local BM25 index management.
    Index {
        #[command(subcommand)]
        action: IndexCommand,
    },
    /// Query a local index.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
    /// Print the confidence report of every example without retrieving.
    Gate {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Task name for records that omit one.
        #[arg(long)]
        task: Option<String>,
        /// Family for records that omit one.
        #[arg(long)]
        family: Option<Family>,
    },
    /// Run every configured example end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Keep examples already traced without error.
        #[arg(long)]
        resume: bool,
    },
    /// Recompute metrics from a trace file.
    Evaluate {
        #[arg(long)]
        traces: PathBuf,
        /// Override the metric recorded in the traces.
        #[arg(long)]
        metric: Option<Metric>,
        /// Also write one report per task into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continual knowledge learning corpus.
    Ckl {
        #[command(subcommand)]
        action: CklCommand,
    },
    /// Draw a temperature-scaled multi-task mixture.
    Mix {
        #[arg(long)]
        config: PathBuf,
        #[arg(short, long)]
        n: usize,
        /// Output JSONL; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diagnostic reports.
    Report {
        #[command(subcommand)]
        action: ReportCommand,
    },
    /// One run per value of a parameter.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PASSAGE_SIZE)]
        passage_size: usize,
    },
}

#[derive(Subcommand)]
enum CklCommand {
    Build {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Entropy histogram split by correctness.
    Entropy {
        #[arg(long)]
        traces: PathBuf,
        /// Directory for the CSV/text/JSON files; defaults to `reports/`
        /// next to the trace file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// TOML or JSON file with `parameter` and `values`.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    parallel_rows: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(io::stderr)
        .init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Index {
            action:
                IndexCommand::Build {
                    corpus,
                    out,
                    passage_size,
                },
        } => {
            let index = pipeline::build_index(&corpus, passage_size)?;
            index.save(&out)?;
            eprintln!("indexed {} passages into {}", index.len(), out.display());
        }
        Command::Retrieve { index, query, k } => {
            let index = Index::load(&index)?;
            let mut out = BufWriter::new(io::stdout().lock());
            for hit in index.query(&query, k)? {
                serde_json::to_writer(&mut out, &hit)?;
                writeln!(out)?;
            }
        }
        Command::Gate {
            examples,
            config,
            task,
            family,
        } => {
            let config = RunConfig::load(&config)?;
            config.confidence.validate()?;
            let loaded = load_task_file(&examples, task.as_deref(), family)?;
            report_bad_records(&examples, &loaded.errors);
            let backend = generator_from_config(&config)?;
            let mut out = BufWriter::new(io::stdout().lock());
            let mut failed = 0;
            for (ex, report) in
                loaded
                    .records
                    .iter()
                    .zip(gate_examples(backend.as_ref(), &config, &loaded.records))
            {
                match report {
                    Ok(r) => {
                        serde_json::to_writer(&mut out, &r)?;
                        writeln!(out)?;
                    }
                    Err(e) => {
                        failed += 1;
                        eprintln!("{}: {e}", ex.example_id);
                    }
                }
            }
            out.flush()?;
            if failed > 0 || !loaded.errors.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Run { config, resume } => {
            let config = RunConfig::load(&config)?;
            let summary = run_batch(&config, resume)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if summary.failed > 0 {
                eprintln!(
                    "{} example(s) failed; see {}",
                    summary.failed,
                    config.output_dir.join(pipeline::TRACES_FILE).display()
                );
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Evaluate {
            traces,
            metric,
            out,
        } => {
            let traces = read_traces(&traces)?;
            if traces.is_empty() {
                bail!("trace file is empty");
            }
            let reports = evaluate_traces(&traces, metric)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
                for r in &reports {
                    let path = dir.join(format!("{}.json", r.task));
                    std::fs::write(&path, serde_json::to_string_pretty(r)?)
                        .with_context(|| format!("writing {}", path.display()))?;
                }
            }
            print!("{}", render_table(&[("run".to_string(), reports)]));
        }
        Command::Ckl {
            action: CklCommand::Build { config },
        } => {
            let config = RunConfig::load(&config)?;
            let summary = build_ckl_corpus(&config)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Mix { config, n, out } => {
            let config = RunConfig::load(&config)?;
            let loaded = load_examples(&config)?;
            let mut datasets: BTreeMap<String, Vec<_>> = BTreeMap::new();
            for ex in loaded.records {
                datasets.entry(ex.task.clone()).or_default().push(ex);
            }
            let sizes = datasets
                .iter()
                .map(|(t, v)| (t.clone(), v.len() as u64))
                .collect();
            for (task, rate) in mixing_rates(&sizes, &config.mixing())? {
                eprintln!("{task}\t{rate:.6}");
            }
            let mixture = sample_mixture(&datasets, &config.mixing(), n)?;
            match out {
                Some(path) => write_task_file(&path, &mixture)?,
                None => {
                    let mut w = BufWriter::new(io::stdout().lock());
                    for ex in &mixture {
                        serde_json::to_writer(&mut w, &task_record(ex))?;
                        writeln!(w)?;
                    }
                }
            }
        }
        Command::Report {
            action: ReportCommand::Entropy { traces, out },
        } => {
            let dir = out.unwrap_or_else(|| sibling_reports(&traces));
            let hist = entropy_histogram(&read_traces(&traces)?)?;
            hist.write(&dir)?;
            print!("{}", hist.to_table());
        }
        Command::Sweep(args) => {
            let config = RunConfig::load(&args.config)?;
            let spec = SweepSpec::load(&args.spec)?;
            let rows = run_sweep(&spec, &config, args.parallel_rows)?;
            print!("{}", sweep_table(spec.name(), &rows));
            eprintln!("reports in {}", reports_dir(&config).display());
            if rows.iter().any(|r| r.error.is_some()) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sibling_reports(traces: &Path) -> PathBuf {
    traces
        .parent()
        .unwrap_or(Path::new("."))
        .join(webaug::reporting::REPORTS_DIR)
}

fn report_bad_records(path: &Path, errors: &[webaug::error::Error]) {
    for e in errors {
        eprintln!("{}: {e}", path.display());
    }
}
