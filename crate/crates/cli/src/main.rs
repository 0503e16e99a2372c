use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mtp_core::harness::{
    ablation_table, eval_table, inspect_memory, log_lines, read_episode_log, replay, to_json,
    write_episode_log, EvalOptions, Harness, HarnessConfig, ProviderFactory, ProviderSpec,
};
use mtp_core::memory::{load_memory, save_memory, Memory};
use mtp_core::orchestrator::{AdapterKind, TemplateSet};
use mtp_core::replanner::Strategy;
use mtp_core::retrieval::rank_memory;
use mtp_core::world::load_suite;

#[derive(Parser)]
#[command(name = "mtp", version, about = "Memory-guided re-planning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one strategy on a suite over seeded repeats.
    Eval(EvalArgs),
    /// Run a suite once and save the successful programs as a memory file.
    BuildMemory(BuildArgs),
    /// Retry, no-adaptation and MTP for each memory file.
    Ablation(AblationArgs),
    /// Re-execute an episode log and check it for drift.
    Replay(ReplayArgs),
    /// List the logs in a memory file.
    InspectMemory(InspectArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    suite: PathBuf,
    /// `scripted:<path>` or `http`.
    #[arg(long, default_value = "scripted:suites/script.json")]
    provider: ProviderSpec,
    /// JSON with provider endpoint settings and embedder constants.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, value_parser = parse_adapter, default_value = "rule")]
    adapter: AdapterKind,
    #[arg(long, default_value_t = 3)]
    max_trials: usize,
    #[arg(long)]
    env_filter: Option<String>,
    /// Worker threads; defaults to the task count capped at the CPU count.
    #[arg(long)]
    workers: Option<usize>,
    /// Use each task's pre-written paraphrases instead of its instruction.
    #[arg(long)]
    paraphrased: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long, default_value = "mtp")]
    strategy: Strategy,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results.json")]
    out: PathBuf,
    /// Write one JSON line per trial here.
    #[arg(long)]
    episode_log: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "single_shot")]
    strategy: Strategy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, required = true, num_args = 1..)]
    memory: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "ablation.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    episode_log: PathBuf,
    #[arg(long)]
    suite: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    memory: PathBuf,
    /// Also rank the logs against this instruction.
    #[arg(long)]
    query: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_adapter(s: &str) -> Result<AdapterKind, String> {
    match s {
        "rule" | "rule_based" => Ok(AdapterKind::RuleBased),
        "llm" => Ok(AdapterKind::Llm),
        _ => Err(format!("adapter must be 'rule' or 'llm', got '{s}'")),
    }
}

fn load_config(path: Option<&Path>) -> Result<HarnessConfig> {
    match path {
        Some(p) => Ok(HarnessConfig::load(p)?),
        None => Ok(HarnessConfig::default()),
    }
}

fn harness(c: &Common) -> Result<Harness> {
    let suite = load_suite(&c.suite)?;
    let config = load_config(c.config.as_deref())?;
    let providers = ProviderFactory::from_spec(&c.provider, &config)?;
    let mut h = Harness::new(suite, providers);
    h.embedder = config.embedder.build()?;
    if let Some(dir) = &c.templates {
        h.templates = TemplateSet::load_dir(dir)?;
    }
    h.workers = c.workers;
    Ok(h)
}

fn options(c: &Common, strategy: Strategy, repeats: usize, seed: u64) -> EvalOptions {
    EvalOptions {
        strategy,
        repeats,
        seed,
        max_trials: c.max_trials,
        adapter: c.adapter,
        env_filter: c.env_filter.clone(),
        paraphrased: c.paraphrased,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let h = harness(&a.common)?;
    let memory = match &a.memory {
        Some(p) => load_memory(p)?,
        None if a.strategy.uses_memory() => {
            bail!("strategy {} needs --memory", a.strategy)
        }
        None => Memory::new("none"),
    };
    let opts = options(&a.common, a.strategy, a.repeats, a.seed);
    let run = h.evaluate(&memory, &opts)?;
    for row in &run.episodes {
        if let Err(e) = &row.episode {
            eprintln!("task {} repeat {}: {e}", row.task_id, row.repeat);
        }
    }
    print!("{}", eval_table(&run.result));
    write(&a.out, &to_json(&run.result))?;
    if let Some(log) = &a.episode_log {
        write_episode_log(log, &log_lines(&run.episodes, a.strategy))?;
    }
    Ok(())
}

fn build_memory(a: BuildArgs) -> Result<()> {
    let h = harness(&a.common)?;
    let label = a
        .out
        .file_stem()
        .map_or_else(|| "memory".to_string(), |s| s.to_string_lossy().into_owned());
    let memory = h.build_memory(&options(&a.common, a.strategy, 1, 0), &label)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_memory(&memory, &a.out)?;
    println!("{} successful program(s) written to {}", memory.len(), a.out.display());
    Ok(())
}

fn ablation(a: AblationArgs) -> Result<()> {
    let h = harness(&a.common)?;
    let memories = a
        .memory
        .iter()
        .map(|p| load_memory(p))
        .collect::<Result<Vec<_>, _>>()?;
    let result = h.ablation(&memories, &options(&a.common, Strategy::Mtp, a.repeats, a.seed))?;
    print!("{}", ablation_table(&result));
    write(&a.out, &to_json(&result))
}

fn replay_log(a: ReplayArgs) -> Result<()> {
    let suite = load_suite(&a.suite)?;
    let log = read_episode_log(&a.episode_log)?;
    let report = replay(&log, &suite)?;
    for line in &report.lines {
        println!("{line}");
    }
    println!("{} trial(s) replayed without drift", report.trials);
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let memory = load_memory(&a.memory)?;
    print!("{}", inspect_memory(&memory));
    if let Some(q) = &a.query {
        let embedder = load_config(a.config.as_deref())?.embedder.build()?;
        let ranking = rank_memory(embedder.as_ref(), q, &memory)?;
        println!("ranking for \"{q}\":");
        for (rank, e) in ranking.entries.iter().enumerate() {
            println!(
                "  {rank}: [{}] {:.4} {}",
                e.memory_index, e.score, memory.logs[e.memory_index].instruction
            );
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Eval(a) => eval(a),
        Command::BuildMemory(a) => build_memory(a),
        Command::Ablation(a) => ablation(a),
        Command::Replay(a) => replay_log(a),
        Command::InspectMemory(a) => inspect(a),
    }
}
