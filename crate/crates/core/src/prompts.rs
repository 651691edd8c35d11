//! Versioned prompt assets and template filling.
//!
//! The workflow, judge, and summarizer prompts ship verbatim as text assets
//! compiled into the binary. Templates use `{placeholder}` slots filled by
//! simple substitution; filled output is byte-deterministic.

use crate::canonical::sha256_hex;

pub const AGENTIC_SYSTEM: &str = include_str!("../assets/prompts/agentic_system.txt");
pub const RAG_SYSTEM: &str = include_str!("../assets/prompts/rag_system.txt");
pub const DIRECT_SYSTEM: &str = include_str!("../assets/prompts/direct_system.txt");
pub const JUDGE_SYSTEM: &str = include_str!("../assets/prompts/judge_system.txt");
pub const JUDGE_USER_TEMPLATE: &str = include_str!("../assets/prompts/judge_user.txt");
pub const SUMMARIZER_SYSTEM: &str = include_str!("../assets/prompts/summarizer_system.txt");
pub const SUMMARIZER_USER_TEMPLATE: &str = include_str!("../assets/prompts/summarizer_user.txt");
pub const RAG_USER_TEMPLATE: &str = include_str!("../assets/prompts/rag_user.txt");

/// Content hashes of every prompt asset, for run manifests.
pub fn asset_hashes() -> Vec<(&'static str, String)> {
    [
        ("agentic_system", AGENTIC_SYSTEM),
        ("rag_system", RAG_SYSTEM),
        ("direct_system", DIRECT_SYSTEM),
        ("judge_system", JUDGE_SYSTEM),
        ("judge_user", JUDGE_USER_TEMPLATE),
        ("summarizer_system", SUMMARIZER_SYSTEM),
        ("summarizer_user", SUMMARIZER_USER_TEMPLATE),
        ("rag_user", RAG_USER_TEMPLATE),
    ]
    .into_iter()
    .map(|(name, text)| (name, sha256_hex(text.as_bytes())))
    .collect()
}

/// Fills the judge prompt template. When candidate answers exist they are
/// appended to the ground-truth line so the judge can apply its
/// multiple-candidate rule.
pub fn fill_judge_prompt(
    question: &str,
    ground_truth: &str,
    candidates: &[String],
    model_response: &str,
) -> String {
    let ground_truth_field = if candidates.is_empty() {
        ground_truth.to_string()
    } else {
        format!("{} (candidate answers: {})", ground_truth, candidates.join("; "))
    };
    JUDGE_USER_TEMPLATE
        .replace("{question}", question)
        .replace("{ground_truth_answer}", &ground_truth_field)
        .replace("{model_response}", model_response)
}

/// Fills the summarizer prompt with page content already truncated upstream.
pub fn fill_summarizer_prompt(content: &str, question: &str) -> String {
    SUMMARIZER_USER_TEMPLATE
        .replace("{content}", content)
        .replace("{question}", question)
}

/// Fills the RAG user prompt with pre-fetched reverse image search results.
pub fn fill_rag_user_prompt(question: &str, image_search_results: &str) -> String {
    RAG_USER_TEMPLATE
        .replace("{question}", question)
        .replace("{image_search_results}", image_search_results)
}
