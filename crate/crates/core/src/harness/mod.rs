//! Experiment harness: memory building, suite evaluation over seeded repeats,
//! strategy/memory ablations, episode logs and replay.

mod replay;
mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::render_program;
use crate::http::{HttpConfig, ProviderError};
use crate::memory::{Memory, MemoryError, SuccessLog};
use crate::orchestrator::{
    AdapterKind, ChatConfig, CompletionProvider, HttpCompletionProvider, OrchestratorError,
    PromptTemplate, Script, ScriptedProvider, TemplateSet,
};
use crate::replanner::{commit_success, EpisodeResult, Replanner, ReplannerConfig, Strategy};
use crate::retrieval::{EmbeddingProvider, HashedNgramEmbedder, RemoteEmbedder};
use crate::world::{Suite, TaskSpec, TraceEntry, WorldError};

pub use replay::{read_episode_log, replay, ReplayError, ReplayReport};
pub use report::{ablation_table, eval_table, inspect_memory};

/// Half-width of the uniform xy jitter applied to each task's scene per repeat.
pub const JITTER: f64 = 0.03;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Hashed {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_ngram")]
        ngram: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Remote {
        #[serde(flatten)]
        http: HttpConfig,
        dimension: usize,
    },
}

fn default_dimension() -> usize {
    HashedNgramEmbedder::default().dimension
}
fn default_ngram() -> usize {
    HashedNgramEmbedder::default().ngram
}
fn default_seed() -> u64 {
    HashedNgramEmbedder::default().seed
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashed {
            dimension: default_dimension(),
            ngram: default_ngram(),
            seed: default_seed(),
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, HarnessError> {
        match self {
            EmbedderConfig::Hashed {
                dimension,
                ngram,
                seed,
            } => {
                if *dimension == 0 || *ngram == 0 {
                    return Err(HarnessError::Config(
                        "embedder dimension and ngram must be positive".into(),
                    ));
                }
                Ok(Box::new(HashedNgramEmbedder {
                    dimension: *dimension,
                    ngram: *ngram,
                    seed: *seed,
                }))
            }
            EmbedderConfig::Remote { http, dimension } => {
                Ok(Box::new(RemoteEmbedder::new(http.clone(), *dimension)))
            }
        }
    }
}

/// Harness config file: chat endpoint settings and embedder constants.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default)]
    pub provider: Option<ChatConfig>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("malformed config {}: {e}", path.display())))
    }
}

/// `scripted:<path>` or `http`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Scripted(PathBuf),
    Http,
}

impl std::str::FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "http" {
            return Ok(ProviderSpec::Http);
        }
        match s.strip_prefix("scripted:") {
            Some(path) if !path.is_empty() => Ok(ProviderSpec::Scripted(PathBuf::from(path))),
            _ => Err(format!("provider must be 'scripted:<path>' or 'http', got '{s}'")),
        }
    }
}

/// Makes one fresh provider per episode so scripted rule consumption never leaks
/// between episodes.
#[derive(Debug, Clone)]
pub enum ProviderFactory {
    Scripted(Script),
    Http(ChatConfig),
}

impl ProviderFactory {
    pub fn from_spec(spec: &ProviderSpec, config: &HarnessConfig) -> Result<Self, HarnessError> {
        match spec {
            ProviderSpec::Scripted(path) => Ok(ProviderFactory::Scripted(Script::load(path)?)),
            ProviderSpec::Http => config.provider.clone().map(ProviderFactory::Http).ok_or_else(|| {
                HarnessError::Config(
                    "--provider http needs a config file with a \"provider\" section".into(),
                )
            }),
        }
    }

    pub fn make(&self) -> Box<dyn CompletionProvider> {
        match self {
            ProviderFactory::Scripted(s) => Box::new(ScriptedProvider::new(s.clone())),
            ProviderFactory::Http(c) => Box::new(HttpCompletionProvider::new(c.clone())),
        }
    }
}

/// Shared inputs of every harness command.
pub struct Harness {
    pub suite: Suite,
    pub providers: ProviderFactory,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub templates: TemplateSet,
    /// Extra profiles for memory logs from environments outside the suite.
    pub environments: BTreeMap<String, crate::world::EnvironmentProfile>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub strategy: Strategy,
    pub repeats: usize,
    pub seed: u64,
    pub max_trials: usize,
    pub adapter: AdapterKind,
    pub env_filter: Option<String>,
    pub paraphrased: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mtp,
            repeats: 3,
            seed: 0,
            max_trials: 3,
            adapter: AdapterKind::RuleBased,
            env_filter: None,
            paraphrased: false,
        }
    }
}

impl EvalOptions {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    fn replanner_config(&self) -> ReplannerConfig {
        ReplannerConfig {
            max_trials: self.max_trials,
            adapter: self.adapter,
            strategy: self.strategy,
            memory_env_filter: self.env_filter.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskTally {
    pub successes: usize,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub strategy: Strategy,
    pub memory: Option<String>,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    /// Success percentage of each repeat.
    pub per_repeat: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    pub per_task: BTreeMap<String, TaskTally>,
}

/// One episode of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub task_id: String,
    pub repeat: usize,
    pub offset: [f64; 2],
    pub episode: Result<EpisodeResult, String>,
}

impl EpisodeRow {
    pub fn success(&self) -> bool {
        self.episode.as_ref().is_ok_and(|e| e.success)
    }
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub result: SuiteResult,
    pub episodes: Vec<EpisodeRow>,
}

/// Per-task xy offsets for one repeat, drawn in suite order from a generator seeded
/// with `seed + repeat`.
pub fn jitter_offsets(seed: u64, repeat: usize, tasks: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(repeat as u64));
    (0..tasks)
        .map(|_| {
            let dx = rng.gen_range(-JITTER..=JITTER);
            let dy = rng.gen_range(-JITTER..=JITTER);
            [dx, dy]
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Harness {
    pub fn new(suite: Suite, providers: ProviderFactory) -> Self {
        Self {
            suite,
            providers,
            embedder: Box::new(HashedNgramEmbedder::default()),
            templates: TemplateSet::default(),
            environments: BTreeMap::new(),
            workers: None,
        }
    }

    fn tasks(&self, paraphrased: bool) -> Vec<TaskSpec> {
        if paraphrased {
            self.suite.paraphrased().tasks
        } else {
            self.suite.tasks.clone()
        }
    }

    fn check(&self, opts: &EvalOptions) -> Result<(), HarnessError> {
        if opts.max_trials == 0 {
            return Err(HarnessError::Config("--max-trials must be at least 1".into()));
        }
        if opts.repeats == 0 {
            return Err(HarnessError::Config("--repeats must be at least 1".into()));
        }
        for env in self.suite.environments.values() {
            PromptTemplate::for_environment(env, &self.templates)?;
        }
        Ok(())
    }

    fn replanner<'a>(&'a self, provider: &'a dyn CompletionProvider) -> Replanner<'a> {
        let mut envs = self.environments.clone();
        envs.extend(self.suite.environments.clone());
        Replanner::new(provider, self.embedder.as_ref())
            .with_templates(self.templates.clone())
            .with_environments(envs)
    }

    fn run_one(&self, task: &TaskSpec, memory: &Memory, config: &ReplannerConfig) -> Result<EpisodeResult, String> {
        let provider = self.providers.make();
        self.replanner(provider.as_ref())
            .run_episode(task, memory, config)
            .map_err(|e| e.to_string())
    }

    fn pool(&self, tasks: usize) -> Result<rayon::ThreadPool, HarnessError> {
        let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
        let width = self.workers.unwrap_or_else(|| tasks.min(cpus)).max(1);
        rayon::ThreadPoolBuilder::new()
            .num_threads(width)
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))
    }

    /// Runs every task once per repeat on jittered scenes.
    pub fn evaluate(&self, memory: &Memory, opts: &EvalOptions) -> Result<EvalRun, HarnessError> {
        self.check(opts)?;
        let tasks = self.tasks(opts.paraphrased);
        let config = opts.replanner_config();
        let pool = self.pool(tasks.len())?;

        let mut jobs = Vec::with_capacity(tasks.len() * opts.repeats);
        for repeat in 0..opts.repeats {
            let offsets = jitter_offsets(opts.seed, repeat, tasks.len());
            for (task, offset) in tasks.iter().zip(offsets) {
                jobs.push((repeat, task, offset));
            }
        }
        let episodes: Vec<EpisodeRow> = pool.install(|| {
            jobs.par_iter()
                .map(|(repeat, task, offset)| {
                    let shifted = task.shifted(offset[0], offset[1]);
                    EpisodeRow {
                        task_id: task.id.clone(),
                        repeat: *repeat,
                        offset: *offset,
                        episode: self.run_one(&shifted, memory, &config),
                    }
                })
                .collect()
        });

        let mut per_task: BTreeMap<String, TaskTally> = BTreeMap::new();
        let mut per_repeat = vec![0usize; opts.repeats];
        for row in &episodes {
            let tally = per_task.entry(row.task_id.clone()).or_default();
            tally.attempts += 1;
            if row.success() {
                tally.successes += 1;
                per_repeat[row.repeat] += 1;
            }
        }
        let per_repeat: Vec<f64> = per_repeat
            .iter()
            .map(|&s| if tasks.is_empty() { 0.0 } else { 100.0 * s as f64 / tasks.len() as f64 })
            .collect();
        let (mean, std) = mean_std(&per_repeat);
        Ok(EvalRun {
            result: SuiteResult {
                strategy: opts.strategy,
                memory: opts.strategy.uses_memory().then(|| memory.source_label.clone()),
                repeats: opts.repeats,
                seeds: (0..opts.repeats).map(|r| opts.seed.wrapping_add(r as u64)).collect(),
                per_repeat,
                mean,
                std,
                per_task,
            },
            episodes,
        })
    }

    /// Runs each task once on its unjittered scene, in suite order, committing every
    /// success. The memory only grows between episodes.
    pub fn build_memory(&self, opts: &EvalOptions, label: &str) -> Result<Memory, HarnessError> {
        self.check(opts)?;
        let config = opts.replanner_config();
        let mut memory = Memory::new(label);
        for task in self.tasks(opts.paraphrased) {
            match self.run_one(&task, &memory, &config) {
                Ok(ep) if ep.success => memory = commit_success(&memory, &task, &ep).map_err(|e| {
                    HarnessError::Config(format!("cannot commit task '{}': {e}", task.id))
                })?,
                Ok(_) => log::info!("task {} failed; not stored", task.id),
                Err(e) => log::warn!("task {}: {e}", task.id),
            }
        }
        Ok(memory)
    }

    /// Retry, no-adaptation and MTP for every memory.
    pub fn ablation(&self, memories: &[Memory], opts: &EvalOptions) -> Result<AblationResult, HarnessError> {
        if memories.is_empty() {
            return Err(HarnessError::Config("ablation needs at least one memory file".into()));
        }
        let mut cells = Vec::new();
        for memory in memories {
            for strategy in ABLATION_STRATEGIES {
                let o = EvalOptions {
                    strategy,
                    ..opts.clone()
                };
                let run = self.evaluate(memory, &o)?;
                cells.push(AblationCell {
                    memory: memory.source_label.clone(),
                    strategy,
                    mean: run.result.mean,
                    std: run.result.std,
                    per_task: run.result.per_task,
                });
            }
        }
        Ok(AblationResult {
            repeats: opts.repeats,
            seed: opts.seed,
            cells,
        })
    }
}

pub const ABLATION_STRATEGIES: [Strategy; 3] = [Strategy::Retry, Strategy::NoAdaptation, Strategy::Mtp];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub memory: String,
    pub strategy: Strategy,
    pub mean: f64,
    pub std: f64,
    pub per_task: BTreeMap<String, TaskTally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub repeats: usize,
    pub seed: u64,
    pub cells: Vec<AblationCell>,
}

impl AblationResult {
    pub fn cell(&self, memory: &str, strategy: Strategy) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.memory == memory && c.strategy == strategy)
    }
}

/// One line of the episode log: a single trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLogLine {
    pub task_id: String,
    pub repeat: usize,
    pub trial: usize,
    pub strategy: Strategy,
    pub offset: [f64; 2],
    pub program: Option<String>,
    pub retrieved: Option<SuccessLog>,
    pub adapted: Option<String>,
    pub success: bool,
    pub failure_reason: Option<String>,
    pub trace: Vec<TraceEntry>,
}

pub fn log_lines(rows: &[EpisodeRow], strategy: Strategy) -> Vec<TrialLogLine> {
    let mut lines = Vec::new();
    for row in rows {
        let Ok(ep) = &row.episode else { continue };
        for t in &ep.trials {
            lines.push(TrialLogLine {
                task_id: row.task_id.clone(),
                repeat: row.repeat,
                trial: t.index,
                strategy,
                offset: row.offset,
                program: t.program.as_ref().map(render_program),
                retrieved: t.retrieved.clone(),
                adapted: t.adapted.as_ref().map(render_program),
                success: t.success(),
                failure_reason: if t.success() { None } else { t.failure_reason() },
                trace: t.result.as_ref().map(|r| r.trace.clone()).unwrap_or_default(),
            });
        }
    }
    lines
}

pub fn write_episode_log(path: &Path, lines: &[TrialLogLine]) -> Result<(), HarnessError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for line in lines {
        let text = serde_json::to_string(line).expect("log lines always serialize");
        writeln!(out, "{text}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results always serialize");
    s.push('\n');
    s
}
