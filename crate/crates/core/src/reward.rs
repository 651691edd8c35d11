//! Trajectory scoring: rule-based format compliance plus judge- or
//! exact-match-based accuracy.
//!
//! The format check is deterministic and re-derives compliance from the
//! raw turn texts rather than trusting the recorded status. Accuracy is
//! either an LLM judge emitting a strict Yes/No verdict or normalized
//! exact match, per configuration. The total reward is always one of
//! {0.0, 0.5, 1.0, 1.5}.

use crate::client::{ChatClient, ChatMessage, TransportError};
use crate::prompts::{fill_judge_prompt, JUDGE_SYSTEM};
use crate::rollout::{Trajectory, TrajectoryStatus};
use crate::schema::SchemaRegistry;
use crate::transcript::{parse_model_turn, Action};
use serde::{Deserialize, Serialize};

pub const ACCURACY_REWARD: f64 = 1.0;
pub const FORMAT_REWARD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_format: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(accurate: bool, compliant: bool) -> Self {
        let r_acc = if accurate { ACCURACY_REWARD } else { 0.0 };
        let r_format = if compliant { FORMAT_REWARD } else { 0.0 };
        Self { r_acc, r_format, total: r_acc + r_format }
    }
}

/// True iff every emitted turn complied with the protocol: think plus a
/// single schema-valid tool call on non-final turns, think plus answer on
/// the final turn of an answered trajectory.
pub fn check_format(trajectory: &Trajectory, schemas: &SchemaRegistry) -> bool {
    if trajectory.status == TrajectoryStatus::Invalid {
        return false;
    }
    let n = trajectory.turns.len();
    for (i, turn) in trajectory.turns.iter().enumerate() {
        let parsed = match parse_model_turn(&turn.raw, schemas) {
            Ok(parsed) => parsed,
            Err(_) => return false,
        };
        let is_final = i + 1 == n;
        match parsed.action {
            Action::FinalAnswer(_) => {
                if !(is_final && trajectory.status == TrajectoryStatus::Answered) {
                    return false;
                }
            }
            Action::ToolCall(_) => {
                if is_final && trajectory.status == TrajectoryStatus::Answered {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub correct: bool,
    pub reason: String,
    pub raw: String,
    /// Set when the judge output had no parseable verdict twice in a row;
    /// such responses score incorrect.
    #[serde(default)]
    pub unparseable: bool,
}

fn extract_tag<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = raw.find(&open)? + open.len();
    let end = raw[start..].find(&close)? + start;
    Some(raw[start..end].trim())
}

fn parse_verdict(raw: &str) -> Option<JudgeVerdict> {
    let decision = extract_tag(raw, "judge")?;
    let correct = match decision.to_ascii_lowercase().as_str() {
        "yes" => true,
        "no" => false,
        _ => return None,
    };
    Some(JudgeVerdict {
        correct,
        reason: extract_tag(raw, "reason").unwrap_or_default().to_string(),
        raw: raw.to_string(),
        unparseable: false,
    })
}

/// Asks the judge for a Yes/No verdict on the final answer. The prompt is
/// the judge template filled verbatim; unparseable responses are retried
/// once, then scored incorrect with the flag set.
pub fn judge_accuracy(
    question: &str,
    ground_truth: &str,
    candidates: &[String],
    answer: &str,
    judge: &dyn ChatClient,
) -> Result<JudgeVerdict, TransportError> {
    let prompt = fill_judge_prompt(question, ground_truth, candidates, answer);
    let messages = [ChatMessage::user(prompt)];
    let mut last_raw = String::new();
    for _ in 0..2 {
        let raw = judge.complete(JUDGE_SYSTEM, &messages)?;
        if let Some(verdict) = parse_verdict(&raw) {
            return Ok(verdict);
        }
        last_raw = raw;
    }
    Ok(JudgeVerdict { correct: false, reason: String::new(), raw: last_raw, unparseable: true })
}

fn normalize(s: &str) -> String {
    let mut t = s.trim();
    loop {
        let stripped = t
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| t.strip_prefix('[').and_then(|r| r.strip_suffix(']')))
            .or_else(|| t.strip_prefix('{').and_then(|r| r.strip_suffix('}')));
        match stripped {
            Some(inner) => t = inner.trim(),
            None => break,
        }
    }
    let t = t.trim_end_matches('.').trim();
    t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Leading option letter of a multiple-choice answer, e.g. "B", "(B)",
/// "B. Paris".
fn option_letter(normalized: &str) -> Option<char> {
    let mut chars = normalized.chars();
    let first = chars.next()?;
    if !('a'..='d').contains(&first) {
        return None;
    }
    match chars.next() {
        None => Some(first),
        Some('.' | ')' | ':') => Some(first),
        _ => None,
    }
}

/// Case-insensitive, whitespace- and bracket-normalized equality against
/// the ground truth or any candidate; a lone matching option letter also
/// passes for multiple-choice items.
pub fn exact_match(answer: &str, ground_truth: &str, candidates: &[String]) -> bool {
    let norm_answer = normalize(answer);
    let mut references = vec![normalize(ground_truth)];
    references.extend(candidates.iter().map(|c| normalize(c)));
    if references.contains(&norm_answer) {
        return true;
    }
    if let Some(answer_letter) = option_letter(&norm_answer) {
        return references
            .iter()
            .filter_map(|r| option_letter(r))
            .any(|ref_letter| ref_letter == answer_letter);
    }
    false
}

/// How accuracy is assessed.
pub enum Scorer<'a> {
    Judge(&'a dyn ChatClient),
    ExactMatch,
}

/// Scores a finished trajectory. Trajectories without an answer score
/// r_acc = 0 without invoking the judge.
pub fn score_trajectory(
    trajectory: &Trajectory,
    question: &str,
    ground_truth: &str,
    candidates: &[String],
    schemas: &SchemaRegistry,
    scorer: &Scorer<'_>,
) -> Result<RewardBreakdown, TransportError> {
    let compliant = check_format(trajectory, schemas);
    let accurate = match &trajectory.answer {
        None => false,
        Some(answer) => match scorer {
            Scorer::ExactMatch => exact_match(answer, ground_truth, candidates),
            Scorer::Judge(judge) => {
                judge_accuracy(question, ground_truth, candidates, answer, *judge)?.correct
            }
        },
    };
    Ok(RewardBreakdown::new(accurate, compliant))
}
