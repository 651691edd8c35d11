//! Offline evaluation: benchmark metrics, difficulty classification, and
//! tool-usage accounting.
//!
//! Metrics are computed from fresh rollouts with a deterministic per-item
//! seed schedule, so a report can be reproduced exactly from the same
//! item set, policy, and base seed. Items whose rollouts hit
//! infrastructure failures (unreachable backends, missing cache entries)
//! are excluded from metric denominators and itemized in the report
//! instead of silently scoring zero.

use crate::canonical::sha256_hex;
use crate::client::PolicyClient;
use crate::reward::{exact_match, judge_accuracy, Scorer};
use crate::rollout::{run_rollout, RolloutError, RolloutLimits, Trajectory};
use crate::schema::SchemaRegistry;
use crate::toolbox::{format_search_results_text, BackendError, Toolbox};
use crate::transcript::{Action, PromptItem, TranscriptEvent, WorkflowKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Rollouts per item used for difficulty classification and SFT
/// filtering.
pub const DIFFICULTY_SAMPLE_COUNT: usize = 8;
/// A retained SFT sample may have at most this many correct rollouts.
pub const SFT_MAX_CORRECT: usize = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("difficulty classification requires exactly {expected} outcomes, got {actual}")]
    WrongSampleCount { expected: usize, actual: usize },
    #[error("judge transport failure: {0}")]
    Judge(crate::client::TransportError),
    #[error(transparent)]
    Rollout(RolloutError),
}

/// Per-item correctness outcomes, one row per classified item.
pub type OutcomeMatrix = Vec<(String, Vec<bool>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricSpec {
    /// One judged rollout per item; the metric is the fraction of items
    /// answered correctly.
    PassAt1,
    /// `k` rollouts per item scored by exact match; per-item mean, then
    /// mean over items.
    AvgAtK { k: usize },
}

impl MetricSpec {
    pub fn samples_per_item(&self) -> usize {
        match self {
            MetricSpec::PassAt1 => 1,
            MetricSpec::AvgAtK { k } => *k,
        }
    }

    pub fn name(&self) -> String {
        match self {
            MetricSpec::PassAt1 => "pass@1".to_string(),
            MetricSpec::AvgAtK { k } => format!("avg@{k}"),
        }
    }
}

/// Outcome of one scored rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub sample_index: usize,
    pub seed: u64,
    pub correct: bool,
    pub answered: bool,
    pub turns: usize,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub item_id: String,
    pub score: f64,
    pub records: Vec<EvalRecord>,
}

/// An item dropped from the metric because of an infrastructure failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub item_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub items: Vec<ItemReport>,
    pub excluded: Vec<ExcludedItem>,
}

impl MetricReport {
    /// True iff `value` equals the mean of the per-item scores, i.e. the
    /// report is internally consistent.
    pub fn is_self_consistent(&self) -> bool {
        if self.items.is_empty() {
            return self.value == 0.0;
        }
        let mean =
            self.items.iter().map(|i| i.score).sum::<f64>() / self.items.len() as f64;
        (self.value - mean).abs() <= 1e-12
    }
}

/// Deterministic seed for one (item, sample) pair, independent of item
/// ordering within the set.
pub fn eval_seed(base_seed: u64, item_id: &str, sample_index: usize) -> u64 {
    let digest = sha256_hex(format!("{base_seed}:{item_id}:{sample_index}").as_bytes());
    let bytes: [u8; 8] = hex::decode(&digest[..16]).expect("valid hex").try_into().unwrap();
    u64::from_be_bytes(bytes)
}

fn is_infrastructure(err: &RolloutError) -> bool {
    match err {
        RolloutError::PolicyTransport(_) => true,
        RolloutError::Tool(tool) => tool.is_infrastructure(),
        _ => false,
    }
}

/// Pre-fetches reverse image search results so they can be injected into
/// the first user message of a retrieval-augmented rollout.
pub fn rag_context(item: &PromptItem, toolbox: &Toolbox) -> Result<String, BackendError> {
    let image = item
        .images
        .first()
        .ok_or_else(|| BackendError::CacheMiss("item has no input image".to_string()))?;
    let results = toolbox.image_backend.search(image)?;
    Ok(format_search_results_text(&results))
}

fn rollout_for(
    item: &PromptItem,
    policy: &dyn PolicyClient,
    toolbox: &Toolbox,
    schemas: &SchemaRegistry,
    workflow: WorkflowKind,
    limits: &RolloutLimits,
    seed: u64,
) -> Result<Trajectory, EvalError> {
    if workflow == WorkflowKind::Direct {
        return crate::rollout::run_direct_rollout(item, policy, limits, seed)
            .map_err(EvalError::Rollout);
    }
    let rag_text = match workflow {
        WorkflowKind::Rag => Some(
            rag_context(item, toolbox)
                .map_err(|e| EvalError::Rollout(RolloutError::Tool(e.into())))?,
        ),
        _ => None,
    };
    run_rollout(item, policy, toolbox, schemas, workflow, limits, seed, rag_text.as_deref())
        .map_err(EvalError::Rollout)
}

fn is_correct(
    trajectory: &Trajectory,
    item: &PromptItem,
    scorer: &Scorer<'_>,
) -> Result<bool, EvalError> {
    let Some(answer) = &trajectory.answer else { return Ok(false) };
    match scorer {
        Scorer::ExactMatch => Ok(exact_match(answer, &item.ground_truth, &item.candidates)),
        Scorer::Judge(judge) => {
            judge_accuracy(&item.question, &item.ground_truth, &item.candidates, answer, *judge)
                .map(|v| v.correct)
                .map_err(EvalError::Judge)
        }
    }
}

/// Runs the metric over an item set. Infrastructure failures exclude the
/// affected item; every other error aborts the run.
#[allow(clippy::too_many_arguments)]
pub fn run_benchmark(
    items: &[PromptItem],
    policy: &dyn PolicyClient,
    toolbox: &Toolbox,
    schemas: &SchemaRegistry,
    workflow: WorkflowKind,
    limits: &RolloutLimits,
    scorer: &Scorer<'_>,
    metric: &MetricSpec,
    base_seed: u64,
) -> Result<MetricReport, EvalError> {
    let k = metric.samples_per_item();
    if k == 0 {
        return Err(EvalError::Config("samples per item must be positive".to_string()));
    }
    let mut reports = Vec::new();
    let mut excluded = Vec::new();
    'items: for item in items {
        let mut records = Vec::with_capacity(k);
        for sample_index in 0..k {
            let seed = eval_seed(base_seed, &item.id, sample_index);
            let trajectory =
                match rollout_for(item, policy, toolbox, schemas, workflow, limits, seed) {
                    Ok(t) => t,
                    Err(EvalError::Rollout(e)) if is_infrastructure(&e) => {
                        excluded.push(ExcludedItem {
                            item_id: item.id.clone(),
                            reason: e.to_string(),
                        });
                        continue 'items;
                    }
                    Err(e) => return Err(e),
                };
            let correct = is_correct(&trajectory, item, scorer)?;
            records.push(EvalRecord {
                item_id: item.id.clone(),
                sample_index,
                seed,
                correct,
                answered: trajectory.answer.is_some(),
                turns: trajectory.turns.len(),
                total_tokens: trajectory.total_tokens(),
            });
        }
        let score =
            records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64;
        reports.push(ItemReport { item_id: item.id.clone(), score, records });
    }
    let value = if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|i| i.score).sum::<f64>() / reports.len() as f64
    };
    Ok(MetricReport { metric: metric.name(), value, items: reports, excluded })
}

// ---------------------------------------------------------------------------
// Difficulty classification and SFT filtering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difficulty {
    /// No rollout answered correctly.
    Hard,
    /// At least one rollout answered correctly.
    Solvable,
}

/// Classifies one item from its eight rollout outcomes: hard iff none
/// were correct.
pub fn classify_difficulty(outcomes: &[bool]) -> Result<Difficulty, EvalError> {
    if outcomes.len() != DIFFICULTY_SAMPLE_COUNT {
        return Err(EvalError::WrongSampleCount {
            expected: DIFFICULTY_SAMPLE_COUNT,
            actual: outcomes.len(),
        });
    }
    if outcomes.iter().any(|&c| c) {
        Ok(Difficulty::Solvable)
    } else {
        Ok(Difficulty::Hard)
    }
}

/// True iff the item should be kept for supervised fine-tuning: at most
/// one of its eight rollouts was correct.
pub fn retain_for_sft(outcomes: &[bool]) -> Result<bool, EvalError> {
    if outcomes.len() != DIFFICULTY_SAMPLE_COUNT {
        return Err(EvalError::WrongSampleCount {
            expected: DIFFICULTY_SAMPLE_COUNT,
            actual: outcomes.len(),
        });
    }
    Ok(outcomes.iter().filter(|&&c| c).count() <= SFT_MAX_CORRECT)
}

/// Rolls out each item `DIFFICULTY_SAMPLE_COUNT` times and records which
/// samples answered correctly. Items with infrastructure failures are
/// returned separately, never classified.
#[allow(clippy::too_many_arguments)]
pub fn outcome_matrix(
    items: &[PromptItem],
    policy: &dyn PolicyClient,
    toolbox: &Toolbox,
    schemas: &SchemaRegistry,
    workflow: WorkflowKind,
    limits: &RolloutLimits,
    scorer: &Scorer<'_>,
    base_seed: u64,
) -> Result<(OutcomeMatrix, Vec<ExcludedItem>), EvalError> {
    let mut matrix = Vec::new();
    let mut excluded = Vec::new();
    'items: for item in items {
        let mut outcomes = Vec::with_capacity(DIFFICULTY_SAMPLE_COUNT);
        for sample_index in 0..DIFFICULTY_SAMPLE_COUNT {
            let seed = eval_seed(base_seed, &item.id, sample_index);
            let trajectory =
                match rollout_for(item, policy, toolbox, schemas, workflow, limits, seed) {
                    Ok(t) => t,
                    Err(EvalError::Rollout(e)) if is_infrastructure(&e) => {
                        excluded.push(ExcludedItem {
                            item_id: item.id.clone(),
                            reason: e.to_string(),
                        });
                        continue 'items;
                    }
                    Err(e) => return Err(e),
                };
            outcomes.push(is_correct(&trajectory, item, scorer)?);
        }
        matrix.push((item.id.clone(), outcomes));
    }
    Ok((matrix, excluded))
}

/// Counts tool calls by name across trajectories, from the recorded
/// transcripts.
pub fn tool_usage_histogram(trajectories: &[Trajectory]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for trajectory in trajectories {
        for event in &trajectory.transcript.events {
            if let TranscriptEvent::Model(turn) = event {
                if let Action::ToolCall(call) = &turn.action {
                    *counts.entry(call.name.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{FnPolicy, PolicyResponse, ScriptedPolicy, TransportError};
    use crate::schema::{agentic_registry, rag_registry};
    use crate::test_support::{empty_toolbox, fixture_item};

    const ANSWER: &str = "<think>done</think><answer>Paris</answer>";
    const WRONG: &str = "<think>done</think><answer>London</answer>";
    const CROP: &str = "<think>zoom</think><tool_call>{\"name\":\"crop_image\",\"arguments\":{\"bbox\":[0.1,0.1,0.9,0.9],\"image_index\":1}}</tool_call>";

    fn items(n: usize) -> Vec<PromptItem> {
        (0..n).map(|i| fixture_item(&format!("item-{i}"))).collect()
    }

    #[test]
    fn seed_schedule_is_deterministic_and_distinct() {
        let a = eval_seed(7, "item-0", 0);
        assert_eq!(a, eval_seed(7, "item-0", 0));
        assert_ne!(a, eval_seed(7, "item-0", 1));
        assert_ne!(a, eval_seed(7, "item-1", 0));
        assert_ne!(a, eval_seed(8, "item-0", 0));
    }

    #[test]
    fn avg_at_k_scores_per_item_then_averages() {
        // Policy answers correctly only for even item ids; every sample of
        // an item behaves the same, so per-item scores are 0 or 1.
        let policy = FnPolicy(|req: &crate::transcript::PolicyRequest, _, _, _| {
            let text = req.messages.iter().any(|m| {
                m.parts.iter().any(|p| {
                    matches!(p, crate::transcript::RenderedPart::Text { text }
                        if text.contains("item-marker-even"))
                })
            });
            Ok(PolicyResponse {
                text: if text { ANSWER } else { WRONG }.to_string(),
                token_count: 5,
                logprobs: None,
            })
        });
        let mut pool = items(4);
        for (i, item) in pool.iter_mut().enumerate() {
            if i % 2 == 0 {
                item.question = format!("item-marker-even {}", item.question);
            }
        }
        let toolbox = empty_toolbox();
        let report = run_benchmark(
            &pool,
            &policy,
            &toolbox,
            &agentic_registry(),
            WorkflowKind::Agentic,
            &RolloutLimits::default(),
            &Scorer::ExactMatch,
            &MetricSpec::AvgAtK { k: 4 },
            11,
        )
        .unwrap();
        assert_eq!(report.items.len(), 4);
        assert_eq!(report.value, 0.5);
        assert!(report.is_self_consistent());
        assert_eq!(report.items[0].records.len(), 4);
    }

    #[test]
    fn infrastructure_failure_excludes_item() {
        let policy = FnPolicy(|req: &crate::transcript::PolicyRequest, _, _, _| {
            let broken = req.messages.iter().any(|m| {
                m.parts.iter().any(|p| {
                    matches!(p, crate::transcript::RenderedPart::Text { text }
                        if text.contains("item-1"))
                })
            });
            if broken {
                Err(TransportError::new("backend down"))
            } else {
                Ok(PolicyResponse { text: ANSWER.to_string(), token_count: 5, logprobs: None })
            }
        });
        let mut pool = items(3);
        for item in &mut pool {
            item.question = format!("{} {}", item.id, item.question);
        }
        let toolbox = empty_toolbox();
        let report = run_benchmark(
            &pool,
            &policy,
            &toolbox,
            &agentic_registry(),
            WorkflowKind::Agentic,
            &RolloutLimits::default(),
            &Scorer::ExactMatch,
            &MetricSpec::PassAt1,
            3,
        )
        .unwrap();
        assert_eq!(report.items.len(), 2);
        assert_eq!(report.excluded.len(), 1);
        assert_eq!(report.excluded[0].item_id, "item-1");
        assert_eq!(report.value, 1.0);
        assert!(report.is_self_consistent());
    }

    #[test]
    fn difficulty_classification_rules() {
        assert_eq!(classify_difficulty(&[false; 8]).unwrap(), Difficulty::Hard);
        let mut one = [false; 8];
        one[3] = true;
        assert_eq!(classify_difficulty(&one).unwrap(), Difficulty::Solvable);
        assert!(matches!(
            classify_difficulty(&[false; 7]),
            Err(EvalError::WrongSampleCount { expected: 8, actual: 7 })
        ));
    }

    #[test]
    fn sft_filter_keeps_at_most_one_correct() {
        assert!(retain_for_sft(&[false; 8]).unwrap());
        let mut one = [false; 8];
        one[0] = true;
        assert!(retain_for_sft(&one).unwrap());
        let mut two = one;
        two[5] = true;
        assert!(!retain_for_sft(&two).unwrap());
        assert!(retain_for_sft(&[true; 4]).is_err());
    }

    #[test]
    fn histogram_counts_tool_calls_by_name() {
        let policy = ScriptedPolicy::new(
            vec![CROP.to_string(), CROP.to_string(), ANSWER.to_string()],
            5,
        );
        let toolbox = empty_toolbox();
        let t = run_rollout(
            &fixture_item("h"),
            &policy,
            &toolbox,
            &agentic_registry(),
            WorkflowKind::Agentic,
            &RolloutLimits::default(),
            0,
            None,
        )
        .unwrap();
        let hist = tool_usage_histogram(&[t]);
        assert_eq!(hist.get("crop_image"), Some(&2));
        assert_eq!(hist.get("web_search"), None);
    }

    #[test]
    fn rag_workflow_injects_retrieval_and_rejects_image_search() {
        use crate::test_support::StaticImageSearch;
        use crate::toolbox::SearchResult;
        let mut toolbox = empty_toolbox();
        toolbox.image_backend = Box::new(StaticImageSearch(vec![SearchResult {
            title: "Eiffel Tower at dusk".to_string(),
            url: "https://example.org/eiffel".to_string(),
            snippet: "landmark".to_string(),
            thumbnail: None,
        }]));
        let policy = ScriptedPolicy::new(vec![ANSWER.to_string()], 5);
        let report = run_benchmark(
            &items(1),
            &policy,
            &toolbox,
            &rag_registry(),
            WorkflowKind::Rag,
            &RolloutLimits::default(),
            &Scorer::ExactMatch,
            &MetricSpec::PassAt1,
            0,
        )
        .unwrap();
        assert_eq!(report.value, 1.0);
        // The retrieval happened up front, not through a tool call.
        assert_eq!(toolbox.counters.snapshot().2, 0);
    }
}
