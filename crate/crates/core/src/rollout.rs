//! The multi-turn episode loop.
//!
//! Each turn: render the transcript, ask the policy for at most the
//! remaining per-turn budget, parse the emission, then either execute the
//! tool call and append its observation or stop on a final answer. Parse
//! failures invalidate the trajectory; recoverable tool failures become
//! error observations and consume the turn; infrastructure failures abort
//! and are never scored.

use crate::client::{PolicyClient, TransportError};
use crate::reward::RewardBreakdown;
use crate::schema::SchemaRegistry;
use crate::toolbox::{ToolError, Toolbox};
use crate::transcript::{
    parse_model_turn, render_for_policy, Action, ContentPart, ImageRegistry, ModelTurn, Observation,
    PromptItem, Transcript, TranscriptError, TranscriptEvent, WorkflowKind,
};
use serde::{Deserialize, Serialize};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Turn and token budgets for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutLimits {
    pub max_turns: u32,
    pub max_tokens_per_turn: u64,
    pub max_tokens_total: u64,
}

impl Default for RolloutLimits {
    fn default() -> Self {
        Self { max_turns: 10, max_tokens_per_turn: 8192, max_tokens_total: 32768 }
    }
}

impl RolloutLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 || self.max_tokens_per_turn == 0 || self.max_tokens_total == 0 {
            return Err("rollout limits must be positive".into());
        }
        if self.max_tokens_per_turn > self.max_tokens_total {
            return Err("per-turn budget cannot exceed the total budget".into());
        }
        Ok(())
    }
}

/// Remaining budget before a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetState {
    Available { remaining_per_turn: u64, remaining_total: u64 },
    Exhausted,
}

/// Budget window given tokens consumed so far, as reported by the policy
/// client.
pub fn check_budgets(consumed: u64, limits: &RolloutLimits) -> BudgetState {
    if consumed >= limits.max_tokens_total {
        return BudgetState::Exhausted;
    }
    let remaining_total = limits.max_tokens_total - consumed;
    BudgetState::Available {
        remaining_per_turn: limits.max_tokens_per_turn.min(remaining_total),
        remaining_total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Answered,
    TurnLimit,
    BudgetExhausted,
    Invalid,
}

/// One policy emission with its accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub raw: String,
    pub token_count: u64,
    #[serde(default)]
    pub logprobs: Option<Vec<f64>>,
}

/// One recorded rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    pub prompt_id: String,
    pub transcript: Transcript,
    pub turns: Vec<TurnRecord>,
    pub status: TrajectoryStatus,
    pub answer: Option<String>,
    pub reward: Option<RewardBreakdown>,
    pub seed: u64,
}

impl Trajectory {
    pub fn total_tokens(&self) -> u64 {
        self.turns.iter().map(|t| t.token_count).sum()
    }
}

/// Distinguished infrastructure failure: never scored as policy behavior.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RolloutError {
    #[error("policy transport failure after retry: {0}")]
    PolicyTransport(TransportError),
    #[error("policy reported {reported} tokens against a budget of {budget}")]
    BudgetViolation { reported: u64, budget: u64 },
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// Builds the opening transcript for an item under a workflow. For RAG,
/// `rag_results_text` carries the pre-fetched reverse image search results
/// injected into the user prompt.
pub fn initial_transcript(
    item: &PromptItem,
    workflow: WorkflowKind,
    rag_results_text: Option<&str>,
) -> Result<Transcript, TranscriptError> {
    let mut registry = ImageRegistry::default();
    for image in &item.images {
        registry.register(image.clone());
    }
    let mut transcript = Transcript::new(workflow.system_prompt(), registry);
    let mut parts: Vec<ContentPart> =
        (1..=item.images.len()).map(ContentPart::image).collect();
    let question_text = match (workflow, rag_results_text) {
        (WorkflowKind::Rag, Some(results)) => {
            crate::prompts::fill_rag_user_prompt(&item.question, results)
        }
        _ => item.question.clone(),
    };
    parts.push(ContentPart::text(question_text));
    transcript.append_event(TranscriptEvent::User { parts })?;
    Ok(transcript)
}

fn generate_with_retry(
    policy: &dyn PolicyClient,
    request: &crate::transcript::PolicyRequest,
    budget: u64,
    seed: u64,
) -> Result<crate::client::PolicyResponse, RolloutError> {
    policy
        .generate(request, budget, seed)
        .or_else(|_| policy.generate(request, budget, seed))
        .map_err(RolloutError::PolicyTransport)
}

/// Runs one episode to termination.
#[allow(clippy::too_many_arguments)]
pub fn run_rollout(
    item: &PromptItem,
    policy: &dyn PolicyClient,
    toolbox: &Toolbox,
    schemas: &SchemaRegistry,
    workflow: WorkflowKind,
    limits: &RolloutLimits,
    seed: u64,
    rag_results_text: Option<&str>,
) -> Result<Trajectory, RolloutError> {
    let mut transcript = initial_transcript(item, workflow, rag_results_text)?;
    let mut turns: Vec<TurnRecord> = Vec::new();
    let mut status = TrajectoryStatus::TurnLimit;
    let mut answer = None;

    for _ in 0..limits.max_turns {
        let consumed: u64 = turns.iter().map(|t| t.token_count).sum();
        let budget = match check_budgets(consumed, limits) {
            BudgetState::Available { remaining_per_turn, .. } => remaining_per_turn,
            BudgetState::Exhausted => {
                status = TrajectoryStatus::BudgetExhausted;
                break;
            }
        };
        let request = render_for_policy(&transcript)?;
        let response = generate_with_retry(policy, &request, budget, seed)?;
        if response.token_count > budget {
            return Err(RolloutError::BudgetViolation {
                reported: response.token_count,
                budget,
            });
        }
        turns.push(TurnRecord {
            raw: response.text.clone(),
            token_count: response.token_count,
            logprobs: response.logprobs.clone(),
        });

        let turn: ModelTurn = match parse_model_turn(&response.text, schemas) {
            Ok(turn) => turn,
            Err(_) => {
                status = TrajectoryStatus::Invalid;
                break;
            }
        };
        let action = turn.action.clone();
        transcript.append_event(TranscriptEvent::Model(turn))?;
        match action {
            Action::FinalAnswer(final_answer) => {
                status = TrajectoryStatus::Answered;
                answer = Some(final_answer.text);
                break;
            }
            Action::ToolCall(call) => {
                let observation =
                    match toolbox.execute(&call, transcript.registry_mut(), &item.question) {
                        Ok(obs) => obs,
                        Err(e) if e.is_infrastructure() => return Err(e.into()),
                        Err(e) => Observation::text_only(format!("Tool error: {e}")),
                    };
                transcript.append_event(TranscriptEvent::Observation(observation))?;
            }
        }
    }

    Ok(Trajectory {
        schema_version: TRAJECTORY_SCHEMA_VERSION,
        prompt_id: item.id.clone(),
        transcript,
        turns,
        status,
        answer,
        reward: None,
        seed,
    })
}

/// Runs the no-tool baseline: a single policy call whose output is taken
/// as the answer. A protocol-compliant think/answer pair is honored; any
/// other text is accepted verbatim unless it attempts a tool call, which
/// a tool-less workflow treats as invalid.
pub fn run_direct_rollout(
    item: &PromptItem,
    policy: &dyn PolicyClient,
    limits: &RolloutLimits,
    seed: u64,
) -> Result<Trajectory, RolloutError> {
    let mut transcript = initial_transcript(item, WorkflowKind::Direct, None)?;
    let budget = limits.max_tokens_per_turn.min(limits.max_tokens_total);
    let request = render_for_policy(&transcript)?;
    let response = generate_with_retry(policy, &request, budget, seed)?;
    if response.token_count > budget {
        return Err(RolloutError::BudgetViolation { reported: response.token_count, budget });
    }
    let turns = vec![TurnRecord {
        raw: response.text.clone(),
        token_count: response.token_count,
        logprobs: response.logprobs.clone(),
    }];

    let empty = SchemaRegistry::empty();
    let (status, answer) = match parse_model_turn(&response.text, &empty) {
        Ok(turn) => match &turn.action {
            Action::FinalAnswer(final_answer) => {
                let text = final_answer.text.clone();
                transcript.append_event(TranscriptEvent::Model(turn))?;
                (TrajectoryStatus::Answered, Some(text))
            }
            Action::ToolCall(_) => unreachable!("empty registry admits no tools"),
        },
        Err(_) if response.text.contains("<tool_call>") => (TrajectoryStatus::Invalid, None),
        Err(_) => {
            let text = response.text.trim().to_string();
            if text.is_empty() {
                (TrajectoryStatus::Invalid, None)
            } else {
                (TrajectoryStatus::Answered, Some(text))
            }
        }
    };

    Ok(Trajectory {
        schema_version: TRAJECTORY_SCHEMA_VERSION,
        prompt_id: item.id.clone(),
        transcript,
        turns,
        status,
        answer,
        reward: None,
        seed,
    })
}

/// A failed group member, kept apart from scored trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberFailure {
    pub seed: u64,
    pub error: String,
}

/// G trajectories sampled from the same prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub prompt_id: String,
    pub members: Vec<Trajectory>,
    pub failures: Vec<MemberFailure>,
}

impl Group {
    /// Partial groups are unusable for optimization.
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs G independent rollouts with seeds `base_seed..base_seed + G`.
/// Each member gets its own image registry; output order follows seed
/// order regardless of execution interleaving.
#[allow(clippy::too_many_arguments)]
pub fn run_group(
    item: &PromptItem,
    policy: &dyn PolicyClient,
    toolbox: &Toolbox,
    schemas: &SchemaRegistry,
    workflow: WorkflowKind,
    limits: &RolloutLimits,
    group_size: u32,
    base_seed: u64,
    rag_results_text: Option<&str>,
) -> Group {
    assert!(group_size >= 1, "group size must be at least 1");
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for g in 0..group_size as u64 {
        let seed = base_seed + g;
        match run_rollout(item, policy, toolbox, schemas, workflow, limits, seed, rag_results_text)
        {
            Ok(trajectory) => members.push(trajectory),
            Err(e) => failures.push(MemberFailure { seed, error: e.to_string() }),
        }
    }
    Group { prompt_id: item.id.clone(), members, failures }
}
