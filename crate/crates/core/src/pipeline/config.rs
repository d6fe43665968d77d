use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use config::{Config, Environment, File};
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceConfig;
use crate::corpus::DEFAULT_PASSAGE_SIZE;
use crate::error::{Error, Result};
use crate::generator::HttpGenerator;
use crate::metrics::Metric;
use crate::retrieval::{Backend, RetrievalConfig};
use crate::unification::{Family, MixingConfig, MAX_PASSAGES};

pub const ENV_PREFIX: &str = "WEBAUG";

/// A task file, given either as a bare path or as a table that also names
/// the task and family for records that omit them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskFile {
    Path(PathBuf),
    Spec {
        path: PathBuf,
        #[serde(default)]
        task: Option<String>,
        #[serde(default)]
        family: Option<Family>,
    },
}

impl TaskFile {
    pub fn path(&self) -> &Path {
        match self {
            TaskFile::Path(p) | TaskFile::Spec { path: p, .. } => p,
        }
    }

    pub fn task(&self) -> Option<&str> {
        match self {
            TaskFile::Path(_) => None,
            TaskFile::Spec { task, .. } => task.as_deref(),
        }
    }

    pub fn family(&self) -> Option<Family> {
        match self {
            TaskFile::Path(_) => None,
            TaskFile::Spec { family, .. } => *family,
        }
    }

    fn path_mut(&mut self) -> &mut PathBuf {
        match self {
            TaskFile::Path(p) | TaskFile::Spec { path: p, .. } => p,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CklConfig {
    pub gazetteer: Vec<String>,
    /// One entity per line.
    pub gazetteer_path: Option<PathBuf>,
    /// Pre-tagged span JSONL; takes precedence over the gazetteer.
    pub tagged_spans: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus_path: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub task_files: Vec<TaskFile>,
    pub retrieval: RetrievalConfig,
    pub confidence: ConfidenceConfig,
    /// Per-task entropy thresholds, consulted before the global one.
    pub task_thresholds: BTreeMap<String, f64>,
    pub mixing: MixingConfig,
    /// `http(s)://` base URL of a generator server, or a mock table path.
    pub generator_endpoint: String,
    pub output_dir: PathBuf,
    /// Seeds confidence sampling and mixing.
    pub seed: u64,
    pub workers: usize,
    /// When false every example retrieves.
    pub gate_enabled: bool,
    pub passage_size: usize,
    pub k_final: usize,
    pub answer_max_tokens: usize,
    /// Per-task metric overrides.
    pub metrics: BTreeMap<String, Metric>,
    pub ckl: CklConfig,
    pub max_in_flight: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_path: None,
            index_path: None,
            task_files: Vec::new(),
            retrieval: RetrievalConfig::default(),
            confidence: ConfidenceConfig::default(),
            task_thresholds: BTreeMap::new(),
            mixing: MixingConfig::default(),
            generator_endpoint: String::new(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: 1,
            gate_enabled: true,
            passage_size: DEFAULT_PASSAGE_SIZE,
            k_final: MAX_PASSAGES,
            answer_max_tokens: 64,
            metrics: BTreeMap::new(),
            ckl: CklConfig::default(),
            max_in_flight: HttpGenerator::DEFAULT_IN_FLIGHT,
        }
    }
}

impl RunConfig {
    /// Reads a TOML or JSON config, applies `WEBAUG_*` environment overrides
    /// (nested keys joined by `__`, e.g. `WEBAUG_CONFIDENCE__N_SAMPLES`) and
    /// resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_env(path, None)
    }

    /// Like [`RunConfig::load`] with an explicit environment map instead of
    /// the process environment.
    pub fn load_with_env(path: &Path, env: Option<HashMap<String, String>>) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::InvalidConfig(format!(
                "config file {} not found",
                path.display()
            )));
        }
        let settings = Config::builder()
            .add_source(File::from(path))
            .add_source(
                Environment::with_prefix(ENV_PREFIX)
                    .prefix_separator("_")
                    .separator("__")
                    .try_parsing(true)
                    .source(env),
            )
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut config: RunConfig = settings
            .try_deserialize()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            self.corpus_path.as_mut(),
            self.index_path.as_mut(),
            self.retrieval.fixture_dir.as_mut(),
            self.ckl.gazetteer_path.as_mut(),
            self.ckl.tagged_spans.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for t in &mut self.task_files {
            fix(t.path_mut());
        }
        fix(&mut self.output_dir);
        if !self.generator_endpoint.is_empty() && !self.generator_is_http() {
            let mut p = PathBuf::from(&self.generator_endpoint);
            fix(&mut p);
            self.generator_endpoint = p.to_string_lossy().into_owned();
        }
    }

    pub fn generator_is_http(&self) -> bool {
        let e = self.generator_endpoint.as_str();
        e.starts_with("http://") || e.starts_with("https://")
    }

    /// Confidence settings for one task: the per-task threshold if any, and
    /// the run seed.
    pub fn confidence_for(&self, task: &str) -> ConfidenceConfig {
        let mut c = self.confidence.clone();
        if let Some(&eta) = self.task_thresholds.get(task) {
            c.entropy_threshold = eta;
        }
        c.sampling.seed = Some(self.seed);
        c
    }

    pub fn metric_for(&self, task: &str, family: Family) -> Metric {
        self.metrics
            .get(task)
            .copied()
            .unwrap_or_else(|| Metric::default_for(family))
    }

    pub fn mixing(&self) -> MixingConfig {
        MixingConfig {
            seed: self.seed,
            ..self.mixing.clone()
        }
    }

    /// Checks values only; see [`RunConfig::check_paths`] for the file system.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if self.k_final == 0 || self.k_final > MAX_PASSAGES {
            return Err(Error::InvalidConfig(format!(
                "k_final must be in 1..={MAX_PASSAGES}"
            )));
        }
        if self.passage_size == 0 {
            return bad("passage_size must be >= 1");
        }
        if self.answer_max_tokens == 0 {
            return bad("answer_max_tokens must be >= 1");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be >= 1");
        }
        if self.generator_endpoint.is_empty() {
            return bad("generator_endpoint is required");
        }
        if self.task_thresholds.values().any(|t| t.is_nan()) {
            return bad("task thresholds must not be NaN");
        }
        self.retrieval.validate()?;
        self.confidence.validate()?;
        if self.retrieval.backend == Backend::LocalIndex
            && self.index_path.is_none()
            && self.corpus_path.is_none()
        {
            return bad("local_index retrieval needs index_path or corpus_path");
        }
        Ok(())
    }

    /// Every referenced input exists and the output directory can be made.
    pub fn check_paths(&self) -> Result<()> {
        let mut required: Vec<&Path> = self.task_files.iter().map(TaskFile::path).collect();
        if self.retrieval.backend == Backend::LocalIndex {
            match (&self.index_path, &self.corpus_path) {
                (Some(p), _) if p.join("index.json").is_file() => {}
                (_, Some(c)) => required.push(c),
                (Some(p), None) => required.push(p),
                (None, None) => {}
            }
        }
        if let Some(d) = &self.retrieval.fixture_dir {
            if self.retrieval.backend == Backend::Fixture {
                required.push(d);
            }
        }
        if !self.generator_is_http() {
            required.push(Path::new(&self.generator_endpoint));
        }
        for p in required {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!(
                    "{} does not exist",
                    p.display()
                )));
            }
        }
        std::fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))
    }
}
