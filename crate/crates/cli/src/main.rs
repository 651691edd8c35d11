//! Command-line front end for the rollout and optimization kernel.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infrastructure
//! failure (unreachable policy or tool backends, missing cache entries),
//! 4 internal consistency violation.

mod config;
mod manifest;

use clap::{Args, Parser, Subcommand};
use config::KernelConfig;
use manifest::RunManifest;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;
use toolrl_core::client::{
    ChatClient, EchoChatClient, HttpChatClient, HttpPolicyClient, PolicyClient, ScriptedPolicy,
};
use toolrl_core::evalbench::{
    classify_difficulty, eval_seed, outcome_matrix, retain_for_sft, run_benchmark, MetricSpec,
};
use toolrl_core::optimizer::{compute_objective, Minibatch, ObjectiveKind};
use toolrl_core::reward::Scorer;
use toolrl_core::rollout::run_group;
use toolrl_core::schema::{agentic_registry, rag_registry, SchemaRegistry};
use toolrl_core::store::TrajectoryStore;
use toolrl_core::test_support::StaticImageSearch;
use toolrl_core::toolbox::image_search::CachedImageSearch;
use toolrl_core::toolbox::text_search::{CachedTextSearch, Document, LocalCorpusBackend};
use toolrl_core::toolbox::{cache::ToolCache, SearchResult, Toolbox};
use toolrl_core::transcript::{ImagePayload, PromptItem, WorkflowKind};

const EXIT_CONFIG: u8 = 2;
const EXIT_INFRA: u8 = 3;
const EXIT_ASSERT: u8 = 4;

#[derive(Debug)]
enum CliError {
    Config(String),
    Infra(String),
    Assert(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Infra(_) => EXIT_INFRA,
            CliError::Assert(_) => EXIT_ASSERT,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Infra(m) | CliError::Assert(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "toolrl", version, about = "Tool-augmented rollout and RL optimization kernel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs instead of refusing.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BackendArgs {
    /// Content-addressed tool cache directory for offline runs.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Directory of JSON documents served as a local search corpus.
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    /// Summarizer chat endpoint; defaults to an identity summarizer.
    #[arg(long)]
    summarizer: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a configuration file.
    ValidateConfig {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sample trajectory groups for every item and append them to a JSONL
    /// log.
    Rollout {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        backends: BackendArgs,
        /// JSON array of task items.
        #[arg(long)]
        items: PathBuf,
        /// Policy endpoint URL, or `script:<path>` for a scripted policy.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workflow: Option<String>,
        #[arg(long)]
        group_size: Option<u32>,
        #[arg(long)]
        base_seed: Option<u64>,
    },
    /// Evaluate a clipped surrogate objective over a serialized minibatch.
    Objective {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON minibatch of reward-labelled groups.
        #[arg(long)]
        batch: PathBuf,
        /// bn-gspo, gspo, or grpo; defaults to the configured objective.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark metric over an item set.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        backends: BackendArgs,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        policy: String,
        /// pass@1 or avg@<k>.
        #[arg(long)]
        metric: String,
        /// Judge chat endpoint; exact match is used when omitted.
        #[arg(long)]
        judge: Option<String>,
        #[arg(long)]
        workflow: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify item difficulty from eight rollouts per item.
    Classify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        backends: BackendArgs,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        workflow: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep items with at most one correct rollout out of eight.
    Filter {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        backends: BackendArgs,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        workflow: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count tool calls by name across a trajectory log.
    Histogram {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seed the offline tool cache with search results.
    CachePrefetch {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        cache_dir: PathBuf,
        /// JSON array of `{query, docs}` text-search entries.
        #[arg(long)]
        text: Option<PathBuf>,
        /// JSON array of `{image, results}` image-search entries.
        #[arg(long)]
        images: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(common: &CommonArgs) -> CliResult<KernelConfig> {
    match &common.config {
        Some(path) => KernelConfig::load(path).map_err(CliError::Config),
        None => Ok(KernelConfig::default()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("malformed {what} {}: {e}", path.display())))
}

fn parse_workflow(name: &str) -> CliResult<WorkflowKind> {
    match name {
        "agentic" => Ok(WorkflowKind::Agentic),
        "rag" => Ok(WorkflowKind::Rag),
        "direct" => Ok(WorkflowKind::Direct),
        other => Err(CliError::Config(format!("unknown workflow `{other}`"))),
    }
}

fn parse_objective(name: &str) -> CliResult<ObjectiveKind> {
    match name {
        "bn-gspo" => Ok(ObjectiveKind::BnGspo),
        "gspo" => Ok(ObjectiveKind::Gspo),
        "grpo" => Ok(ObjectiveKind::Grpo),
        other => Err(CliError::Config(format!("unknown objective `{other}`"))),
    }
}

fn parse_metric(name: &str) -> CliResult<MetricSpec> {
    if name == "pass@1" {
        return Ok(MetricSpec::PassAt1);
    }
    if let Some(k) = name.strip_prefix("avg@") {
        let k: usize =
            k.parse().map_err(|_| CliError::Config(format!("bad metric `{name}`")))?;
        if k == 0 {
            return Err(CliError::Config("avg@k needs k >= 1".to_string()));
        }
        return Ok(MetricSpec::AvgAtK { k });
    }
    Err(CliError::Config(format!("unknown metric `{name}`; use pass@1 or avg@<k>")))
}

fn schemas_for(workflow: WorkflowKind) -> SchemaRegistry {
    match workflow {
        WorkflowKind::Agentic => agentic_registry(),
        WorkflowKind::Rag => rag_registry(),
        WorkflowKind::Direct => SchemaRegistry::empty(),
    }
}

#[derive(serde::Deserialize)]
struct ScriptFile {
    turns: Vec<String>,
    tokens_per_turn: u64,
}

fn build_policy(spec: &str) -> CliResult<Box<dyn PolicyClient>> {
    if let Some(path) = spec.strip_prefix("script:") {
        let script: ScriptFile = read_json(Path::new(path), "policy script")?;
        return Ok(Box::new(ScriptedPolicy::new(script.turns, script.tokens_per_turn)));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(HttpPolicyClient::new(spec, Duration::from_secs(60))));
    }
    Err(CliError::Config(format!(
        "policy must be an http(s) URL or `script:<path>`, got `{spec}`"
    )))
}

fn build_toolbox(backends: &BackendArgs) -> CliResult<Toolbox> {
    let summarizer: Box<dyn ChatClient> = match &backends.summarizer {
        Some(url) => Box::new(HttpChatClient::new(url, Duration::from_secs(60))),
        None => Box::new(EchoChatClient),
    };
    if let Some(dir) = &backends.cache_dir {
        let text_cache = ToolCache::new(dir)
            .map_err(|e| CliError::Infra(format!("cannot open cache: {e}")))?;
        let image_cache = ToolCache::open(dir);
        return Ok(Toolbox::new(
            Box::new(CachedTextSearch::new(text_cache)),
            Box::new(CachedImageSearch::new(image_cache)),
            summarizer,
        ));
    }
    let text_backend = match &backends.corpus_dir {
        Some(dir) => LocalCorpusBackend::from_dir(dir)
            .map_err(|e| CliError::Config(format!("cannot load corpus: {e}")))?,
        None => LocalCorpusBackend::new(vec![]),
    };
    Ok(Toolbox::new(
        Box::new(text_backend),
        Box::new(StaticImageSearch(vec![])),
        summarizer,
    ))
}

fn guard_output(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    if path.exists() {
        std::fs::remove_file(path)
            .map_err(|e| CliError::Infra(format!("cannot remove {}: {e}", path.display())))?;
    }
    Ok(())
}

fn emit(
    value: &impl serde::Serialize,
    out: Option<&Path>,
    force: bool,
    config_hash: String,
) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Assert(format!("serialization failed: {e}")))?;
    match out {
        Some(path) => {
            guard_output(path, force)?;
            std::fs::write(path, &text)
                .map_err(|e| CliError::Infra(format!("cannot write {}: {e}", path.display())))?;
            RunManifest::new(config_hash, vec![path.to_path_buf()])
                .write_beside(path)
                .map_err(|e| CliError::Infra(format!("cannot write manifest: {e}")))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn collect_outcomes(
    common: &CommonArgs,
    backends: &BackendArgs,
    items_path: &Path,
    policy_spec: &str,
    workflow_override: &Option<String>,
) -> CliResult<(KernelConfig, toolrl_core::evalbench::OutcomeMatrix, Vec<toolrl_core::evalbench::ExcludedItem>)> {
    let config = load_config(common)?;
    let items: Vec<PromptItem> = read_json(items_path, "items")?;
    let policy = build_policy(policy_spec)?;
    let toolbox = build_toolbox(backends)?;
    let workflow =
        parse_workflow(workflow_override.as_deref().unwrap_or(&config.rollout.workflow))?;
    let (matrix, excluded) = outcome_matrix(
        &items,
        policy.as_ref(),
        &toolbox,
        &schemas_for(workflow),
        workflow,
        &config.rollout_limits(),
        &Scorer::ExactMatch,
        config.eval.base_seed,
    )
    .map_err(|e| CliError::Infra(e.to_string()))?;
    Ok((config, matrix, excluded))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::ValidateConfig { common } => {
            let config = load_config(&common)?;
            println!("ok {}", config.content_hash());
            Ok(())
        }

        Command::Rollout {
            common,
            backends,
            items,
            policy,
            out,
            workflow,
            group_size,
            base_seed,
        } => {
            let config = load_config(&common)?;
            let items: Vec<PromptItem> = read_json(&items, "items")?;
            let policy = build_policy(&policy)?;
            let toolbox = build_toolbox(&backends)?;
            let workflow =
                parse_workflow(workflow.as_deref().unwrap_or(&config.rollout.workflow))?;
            let group_size = group_size.unwrap_or(config.rollout.group_size);
            let base_seed = base_seed.unwrap_or(config.rollout.base_seed);
            if common.force {
                guard_output(&out, true)?;
            }
            let store = TrajectoryStore::new(&out);
            let mut written = 0usize;
            for item in &items {
                let rag_text = if workflow == WorkflowKind::Rag {
                    Some(
                        toolrl_core::evalbench::rag_context(item, &toolbox)
                            .map_err(|e| CliError::Infra(e.to_string()))?,
                    )
                } else {
                    None
                };
                let group = run_group(
                    item,
                    policy.as_ref(),
                    &toolbox,
                    &schemas_for(workflow),
                    workflow,
                    &config.rollout_limits(),
                    group_size,
                    eval_seed(base_seed, &item.id, 0),
                    rag_text.as_deref(),
                );
                if !group.is_complete() {
                    return Err(CliError::Infra(format!(
                        "group for `{}` lost {} members: {}",
                        item.id,
                        group.failures.len(),
                        group.failures[0].error
                    )));
                }
                for member in &group.members {
                    store
                        .append(member)
                        .map_err(|e| CliError::Infra(e.to_string()))?;
                    written += 1;
                }
            }
            RunManifest::new(config.content_hash(), vec![out.clone()])
                .write_beside(&out)
                .map_err(|e| CliError::Infra(format!("cannot write manifest: {e}")))?;
            println!("wrote {written} trajectories to {}", out.display());
            Ok(())
        }

        Command::Objective { common, batch, objective, out } => {
            let config = load_config(&common)?;
            let minibatch: Minibatch = read_json(&batch, "minibatch")?;
            let kind =
                parse_objective(objective.as_deref().unwrap_or(&config.optimizer.objective))?;
            let result = compute_objective(&minibatch, &config.optimizer_config(), kind)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let report = serde_json::json!({
                "objective": objective.unwrap_or(config.optimizer.objective.clone()),
                "value": result.value,
                "diagnostics": result.diagnostics,
            });
            emit(&report, out.as_deref(), common.force, config.content_hash())
        }

        Command::Eval { common, backends, items, policy, metric, judge, workflow, out } => {
            let config = load_config(&common)?;
            let items: Vec<PromptItem> = read_json(&items, "items")?;
            let policy = build_policy(&policy)?;
            let toolbox = build_toolbox(&backends)?;
            let metric = parse_metric(&metric)?;
            let workflow =
                parse_workflow(workflow.as_deref().unwrap_or(&config.rollout.workflow))?;
            let judge_client =
                judge.map(|url| HttpChatClient::new(url, Duration::from_secs(60)));
            let scorer = match &judge_client {
                Some(client) => Scorer::Judge(client),
                None => Scorer::ExactMatch,
            };
            let report = run_benchmark(
                &items,
                policy.as_ref(),
                &toolbox,
                &schemas_for(workflow),
                workflow,
                &config.rollout_limits(),
                &scorer,
                &metric,
                config.eval.base_seed,
            )
            .map_err(|e| CliError::Infra(e.to_string()))?;
            if !report.is_self_consistent() {
                return Err(CliError::Assert(
                    "metric value disagrees with per-item scores".to_string(),
                ));
            }
            emit(&report, out.as_deref(), common.force, config.content_hash())
        }

        Command::Classify { common, backends, items, policy, workflow, out } => {
            let (config, matrix, excluded) =
                collect_outcomes(&common, &backends, &items, &policy, &workflow)?;
            let rows: Vec<serde_json::Value> = matrix
                .iter()
                .map(|(id, outcomes)| {
                    let difficulty = classify_difficulty(outcomes)
                        .map_err(|e| CliError::Assert(e.to_string()))?;
                    Ok(serde_json::json!({
                        "item_id": id,
                        "outcomes": outcomes,
                        "difficulty": difficulty,
                    }))
                })
                .collect::<CliResult<_>>()?;
            let report = serde_json::json!({ "items": rows, "excluded": excluded });
            emit(&report, out.as_deref(), common.force, config.content_hash())
        }

        Command::Filter { common, backends, items, policy, workflow, out } => {
            let (config, matrix, excluded) =
                collect_outcomes(&common, &backends, &items, &policy, &workflow)?;
            let mut retained = Vec::new();
            for (id, outcomes) in &matrix {
                if retain_for_sft(outcomes).map_err(|e| CliError::Assert(e.to_string()))? {
                    retained.push(id.clone());
                }
            }
            let report = serde_json::json!({
                "retained": retained,
                "dropped": matrix.len() - retained.len(),
                "excluded": excluded,
            });
            emit(&report, out.as_deref(), common.force, config.content_hash())
        }

        Command::Histogram { common, trajectories, out } => {
            let config = load_config(&common)?;
            let store = TrajectoryStore::new(&trajectories);
            let log = store.read_all().map_err(|e| CliError::Config(e.to_string()))?;
            let counts = toolrl_core::evalbench::tool_usage_histogram(&log);
            emit(&counts, out.as_deref(), common.force, config.content_hash())
        }

        Command::CachePrefetch { common, cache_dir, text, images } => {
            let config = load_config(&common)?;
            let cache = ToolCache::new(&cache_dir)
                .map_err(|e| CliError::Infra(format!("cannot open cache: {e}")))?;
            let mut stored = 0usize;
            if let Some(path) = text {
                #[derive(serde::Deserialize)]
                struct TextEntry {
                    query: String,
                    docs: Vec<Document>,
                }
                let entries: Vec<TextEntry> = read_json(&path, "text prefetch")?;
                let backend = CachedTextSearch::new(ToolCache::open(cache.dir()));
                for entry in entries {
                    if backend
                        .store(&entry.query, &entry.docs)
                        .map_err(|e| CliError::Infra(e.to_string()))?
                    {
                        stored += 1;
                    }
                }
            }
            if let Some(path) = images {
                #[derive(serde::Deserialize)]
                struct ImageEntry {
                    image: ImagePayload,
                    results: Vec<SearchResult>,
                }
                let entries: Vec<ImageEntry> = read_json(&path, "image prefetch")?;
                let backend = CachedImageSearch::new(ToolCache::open(cache.dir()));
                for entry in entries {
                    if backend
                        .store(&entry.image, &entry.results)
                        .map_err(|e| CliError::Infra(e.to_string()))?
                    {
                        stored += 1;
                    }
                }
            }
            let _ = config;
            println!("stored {stored} cache entries in {}", cache_dir.display());
            Ok(())
        }
    }
}
