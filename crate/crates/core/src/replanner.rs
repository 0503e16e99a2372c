//! The re-planning loop: generate and execute a plan, and on failure retrieve similar
//! successful plans from memory, adapt them to the target environment, and ask for a
//! new plan with the adapted plan and the failed plan in context.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse_program, render_program, PlannerProgram};
use crate::memory::{append_log, filter_by_environment, Memory, MemoryError, SuccessLog};
use crate::orchestrator::{
    adapt_program, build_generation_prompt, build_replan_prompt, complete, extract_program,
    AdapterKind, CompletionProvider, OrchestratorError, PromptTemplate, TemplateSet,
};
use crate::retrieval::{rank_memory, retrieve_ith, EmbeddingProvider, RetrievalRanking};
use crate::world::{execute_program, EnvironmentProfile, ExecutionResult, TaskSpec};

#[derive(Debug, Error)]
pub enum ReplannerError {
    #[error("max_trials must be at least 1")]
    InvalidConfig,
    #[error("cannot build prompts for environment '{env}': {source}")]
    Template {
        env: String,
        #[source]
        source: OrchestratorError,
    },
    #[error("episode for task '{0}' did not succeed")]
    NotSuccessful(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Retrieve, adapt, re-plan.
    #[default]
    Mtp,
    /// Re-execute the first program unchanged.
    Retry,
    /// Retrieve and re-plan with the unadapted source plan.
    NoAdaptation,
    /// One trial only.
    SingleShot,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::SingleShot,
        Strategy::Retry,
        Strategy::NoAdaptation,
        Strategy::Mtp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Mtp => "mtp",
            Strategy::Retry => "retry",
            Strategy::NoAdaptation => "no_adaptation",
            Strategy::SingleShot => "single_shot",
        }
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, Strategy::Mtp | Strategy::NoAdaptation)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mtp" => Ok(Strategy::Mtp),
            "retry" => Ok(Strategy::Retry),
            "no_adaptation" => Ok(Strategy::NoAdaptation),
            "single_shot" => Ok(Strategy::SingleShot),
            other => Err(format!(
                "unknown strategy '{other}' (expected mtp, retry, no_adaptation or single_shot)"
            )),
        }
    }
}

fn default_trials() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplannerConfig {
    #[serde(default = "default_trials")]
    pub max_trials: usize,
    #[serde(default)]
    pub adapter: AdapterKind,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub memory_env_filter: Option<String>,
}

impl Default for ReplannerConfig {
    fn default() -> Self {
        Self {
            max_trials: default_trials(),
            adapter: AdapterKind::RuleBased,
            strategy: Strategy::Mtp,
            memory_env_filter: None,
        }
    }
}

impl ReplannerConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    /// Trial budget after applying the strategy.
    pub fn trials(&self) -> usize {
        match self.strategy {
            Strategy::SingleShot => 1,
            _ => self.max_trials,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    /// `None` when no program could be obtained (provider or extraction error).
    pub program: Option<PlannerProgram>,
    pub retrieved: Option<SuccessLog>,
    pub adapted: Option<PlannerProgram>,
    pub result: Option<ExecutionResult>,
    /// Provider, extraction, adaptation or retrieval error that ended the trial.
    pub error: Option<String>,
    /// The memory example handed to the re-planner equals the failed plan.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate_retrieval: bool,
}

impl TrialRecord {
    fn new(index: usize) -> Self {
        Self {
            index,
            program: None,
            retrieved: None,
            adapted: None,
            result: None,
            error: None,
            degenerate_retrieval: false,
        }
    }

    pub fn success(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.success)
    }

    pub fn failure_reason(&self) -> Option<String> {
        if let Some(e) = &self.error {
            return Some(e.clone());
        }
        match &self.result {
            Some(r) => r.failure_reason.clone(),
            None => Some("no result".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub trials: Vec<TrialRecord>,
    pub success: bool,
    pub successful_trial: Option<usize>,
}

impl EpisodeResult {
    pub fn successful_program(&self) -> Option<&PlannerProgram> {
        self.successful_trial
            .and_then(|i| self.trials.get(i))
            .and_then(|t| t.program.as_ref())
    }
}

/// Everything an episode needs besides the task, memory and config.
pub struct Replanner<'a> {
    provider: &'a dyn CompletionProvider,
    embedder: &'a dyn EmbeddingProvider,
    templates: TemplateSet,
    environments: BTreeMap<String, EnvironmentProfile>,
}

impl<'a> Replanner<'a> {
    pub fn new(provider: &'a dyn CompletionProvider, embedder: &'a dyn EmbeddingProvider) -> Self {
        Self {
            provider,
            embedder,
            templates: TemplateSet::default(),
            environments: BTreeMap::new(),
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    /// Profiles of the environments memory logs may come from.
    pub fn with_environments(mut self, environments: BTreeMap<String, EnvironmentProfile>) -> Self {
        self.environments = environments;
        self
    }

    fn source_profile(&self, task: &TaskSpec, name: &str) -> EnvironmentProfile {
        if name == task.environment.name {
            return task.environment.clone();
        }
        self.environments.get(name).cloned().unwrap_or_else(|| {
            log::warn!("memory environment '{name}' has no profile; assuming defaults");
            EnvironmentProfile::new(name)
        })
    }

    /// Runs one episode. Errors are configuration problems only; anything that goes
    /// wrong inside a trial is recorded on that trial.
    pub fn run_episode(
        &self,
        task: &TaskSpec,
        memory: &Memory,
        config: &ReplannerConfig,
    ) -> Result<EpisodeResult, ReplannerError> {
        if config.max_trials == 0 {
            return Err(ReplannerError::InvalidConfig);
        }
        let template = PromptTemplate::for_environment(&task.environment, &self.templates)
            .map_err(|source| ReplannerError::Template {
                env: task.environment.name.clone(),
                source,
            })?;
        let scene = task.object_names();
        let mut episode = Episode {
            planner: self,
            task,
            template: &template,
            scene: &scene,
            config,
            first_program: None,
            last_failed: None,
        };

        let mut trials = Vec::new();
        let first = episode.generate(0);
        let mut done = first.success();
        trials.push(first);

        let mut ranking: Option<(Memory, Result<RetrievalRanking, String>)> = None;
        for i in 1..config.trials() {
            if done {
                break;
            }
            let trial = if config.strategy.uses_memory() {
                let (filtered, ranked) = ranking.get_or_insert_with(|| {
                    let filtered = match &config.memory_env_filter {
                        Some(env) => filter_by_environment(memory, env),
                        None => memory.clone(),
                    };
                    let ranked = rank_memory(self.embedder, &task.instruction, &filtered)
                        .map_err(|e| format!("retrieval failed: {e}"));
                    (filtered, ranked)
                });
                match ranked {
                    Err(e) => {
                        let mut t = TrialRecord::new(i);
                        t.error = Some(e.clone());
                        t
                    }
                    Ok(r) if i - 1 < r.len() => {
                        let log = retrieve_ith(r, filtered, i - 1)
                            .expect("rank index checked against ranking length")
                            .clone();
                        episode.replan(i, log)
                    }
                    Ok(_) => episode.retry(i),
                }
            } else {
                episode.retry(i)
            };
            done = trial.success();
            trials.push(trial);
        }

        let successful_trial = trials.iter().position(TrialRecord::success);
        Ok(EpisodeResult {
            task_id: task.id.clone(),
            success: successful_trial.is_some(),
            successful_trial,
            trials,
        })
    }
}

struct Episode<'e, 'a> {
    planner: &'e Replanner<'a>,
    task: &'e TaskSpec,
    template: &'e PromptTemplate,
    scene: &'e [String],
    config: &'e ReplannerConfig,
    first_program: Option<PlannerProgram>,
    last_failed: Option<PlannerProgram>,
}

impl Episode<'_, '_> {
    fn ask(&self, prompt: Result<String, OrchestratorError>) -> Result<PlannerProgram, String> {
        let prompt = prompt.map_err(|e| format!("prompt construction failed: {e}"))?;
        let response =
            complete(self.planner.provider, &prompt).map_err(|e| format!("provider error: {e}"))?;
        extract_program(&response).map_err(|e| format!("extraction failed: {e}"))
    }

    fn generation_prompt(&self) -> Result<String, OrchestratorError> {
        build_generation_prompt(self.template, &self.task.instruction, Some(self.scene))
    }

    fn execute(&mut self, mut trial: TrialRecord, program: Result<PlannerProgram, String>) -> TrialRecord {
        match program {
            Ok(program) => {
                let result = execute_program(self.task, &program);
                if !result.success {
                    self.last_failed = Some(program.clone());
                }
                if self.first_program.is_none() {
                    self.first_program = Some(program.clone());
                }
                trial.program = Some(program);
                trial.result = Some(result);
            }
            Err(e) => trial.error = Some(e),
        }
        trial
    }

    fn generate(&mut self, index: usize) -> TrialRecord {
        let program = self.ask(self.generation_prompt());
        self.execute(TrialRecord::new(index), program)
    }

    /// Re-executes the first program as is; asks again only if there never was one.
    fn retry(&mut self, index: usize) -> TrialRecord {
        match self.first_program.clone() {
            Some(p) => self.execute(TrialRecord::new(index), Ok(p)),
            None => self.generate(index),
        }
    }

    fn replan(&mut self, index: usize, log: SuccessLog) -> TrialRecord {
        let mut trial = TrialRecord::new(index);
        let source = match parse_program(&log.code) {
            Ok(p) => p,
            Err(e) => {
                trial.retrieved = Some(log);
                trial.error = Some(format!("retrieved code does not parse: {e}"));
                return trial;
            }
        };
        let source_env = self.planner.source_profile(self.task, &log.environment);
        trial.retrieved = Some(log);

        let example = if self.config.strategy == Strategy::NoAdaptation {
            source
        } else {
            let llm = (self.config.adapter == AdapterKind::Llm)
                .then_some((self.planner.provider, self.template));
            match adapt_program(
                self.config.adapter,
                &source,
                &source_env,
                &self.task.environment,
                self.scene,
                llm,
            ) {
                Ok(adapted) => {
                    trial.adapted = Some(adapted.clone());
                    adapted
                }
                Err(e) => {
                    trial.error = Some(format!("adaptation failed: {e}"));
                    return trial;
                }
            }
        };

        let prompt = match &self.last_failed {
            Some(failed) => {
                trial.degenerate_retrieval = failed.steps == example.steps;
                if trial.degenerate_retrieval {
                    log::debug!("task {}: memory example equals the failed plan", self.task.id);
                }
                build_replan_prompt(
                    self.template,
                    &render_program(failed),
                    &render_program(&example),
                    &self.task.instruction,
                )
            }
            None => self.generation_prompt(),
        };
        let program = self.ask(prompt);
        self.execute(trial, program)
    }
}

/// Convenience wrapper with the built-in templates and no extra environment profiles.
pub fn run_episode(
    task: &TaskSpec,
    memory: &Memory,
    config: &ReplannerConfig,
    provider: &dyn CompletionProvider,
    embedder: &dyn EmbeddingProvider,
) -> Result<EpisodeResult, ReplannerError> {
    Replanner::new(provider, embedder).run_episode(task, memory, config)
}

/// Appends the successful program of `episode` to memory.
pub fn commit_success(
    memory: &Memory,
    task: &TaskSpec,
    episode: &EpisodeResult,
) -> Result<Memory, ReplannerError> {
    let program = episode
        .successful_program()
        .filter(|_| episode.success)
        .ok_or_else(|| ReplannerError::NotSuccessful(episode.task_id.clone()))?;
    let log = SuccessLog::new(
        task.environment.name.clone(),
        task.instruction.clone(),
        render_program(program),
    );
    Ok(append_log(memory, log)?)
}
