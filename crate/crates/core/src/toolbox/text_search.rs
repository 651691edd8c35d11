//! Text search backends and the retrieval-plus-summarization pipeline.
//!
//! Regardless of backend, the top five retrieved pages are truncated to
//! their first 30000 characters, summarized one by one, and then condensed
//! into a single holistic summary. The same summarizer prompt is used for
//! both stages.

use crate::client::{ChatClient, ChatMessage};
use crate::prompts::fill_summarizer_prompt;
use crate::toolbox::cache::ToolCache;
use crate::toolbox::BackendError;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

pub const TOP_K_RESULTS: usize = 5;
pub const PAGE_TRUNCATION_CHARS: usize = 30000;

/// A retrieved document with its page body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    pub url: String,
    pub body: String,
}

pub trait TextSearchBackend: Send + Sync {
    /// Top documents for a query, best first, at most [`TOP_K_RESULTS`].
    fn search(&self, query: &str) -> Result<Vec<Document>, BackendError>;
}

/// Per-page summaries plus one holistic summary over them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizedObservation {
    pub per_page_summaries: Vec<String>,
    pub holistic_summary: String,
}

impl SummarizedObservation {
    pub fn no_results() -> Self {
        Self { per_page_summaries: Vec::new(), holistic_summary: String::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.per_page_summaries.is_empty()
    }

    /// Observation text injected back into the transcript.
    pub fn observation_text(&self) -> String {
        if self.is_empty() {
            return "no results".to_string();
        }
        let mut out = String::new();
        for (i, summary) in self.per_page_summaries.iter().enumerate() {
            out.push_str(&format!("[Page {} summary] {}\n", i + 1, summary));
        }
        out.push_str(&format!("[Overall summary] {}", self.holistic_summary));
        out
    }
}

fn truncate_chars(s: &str, limit: usize) -> String {
    s.chars().take(limit).collect()
}

/// Runs retrieval and two-stage summarization for one query.
pub fn text_search(
    query: &str,
    backend: &dyn TextSearchBackend,
    summarizer: &dyn ChatClient,
    question: &str,
) -> Result<SummarizedObservation, BackendError> {
    assert!(!query.is_empty(), "query must be non-empty");
    let docs = backend.search(query)?;
    if docs.is_empty() {
        return Ok(SummarizedObservation::no_results());
    }
    let mut per_page_summaries = Vec::with_capacity(docs.len().min(TOP_K_RESULTS));
    for doc in docs.iter().take(TOP_K_RESULTS) {
        let content = truncate_chars(&doc.body, PAGE_TRUNCATION_CHARS);
        let prompt = fill_summarizer_prompt(&content, question);
        let summary = summarizer
            .complete(crate::prompts::SUMMARIZER_SYSTEM, &[ChatMessage::user(prompt)])
            .map_err(|e| BackendError::Unavailable(e.message))?;
        per_page_summaries.push(summary);
    }
    let joined = per_page_summaries.join("\n\n");
    let prompt = fill_summarizer_prompt(&truncate_chars(&joined, PAGE_TRUNCATION_CHARS), question);
    let holistic_summary = summarizer
        .complete(crate::prompts::SUMMARIZER_SYSTEM, &[ChatMessage::user(prompt)])
        .map_err(|e| BackendError::Unavailable(e.message))?;
    Ok(SummarizedObservation { per_page_summaries, holistic_summary })
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// Offline backend reading pre-fetched result sets from the tool cache.
pub struct CachedTextSearch {
    cache: ToolCache,
}

impl CachedTextSearch {
    pub fn new(cache: ToolCache) -> Self {
        Self { cache }
    }

    pub fn cache_key(query: &str) -> String {
        ToolCache::key(crate::schema::WEB_SEARCH, &json!({ "query": query }), None)
    }

    pub fn store(&self, query: &str, docs: &[Document]) -> std::io::Result<bool> {
        self.cache.put(&Self::cache_key(query), &docs.to_vec())
    }
}

impl TextSearchBackend for CachedTextSearch {
    fn search(&self, query: &str) -> Result<Vec<Document>, BackendError> {
        let key = Self::cache_key(query);
        self.cache
            .get::<Vec<Document>>(&key)
            .ok_or(BackendError::MissingCacheEntry(key))
    }
}

fn tokenize(s: &str) -> BTreeSet<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Ranks user-supplied documents by term overlap with the query. Stands in
/// for a dense retriever over a local corpus; zero-overlap documents are
/// never returned.
pub struct LocalCorpusBackend {
    docs: Vec<Document>,
}

impl LocalCorpusBackend {
    pub fn new(docs: Vec<Document>) -> Self {
        Self { docs }
    }

    /// Loads every regular file under `dir` as one document (title = file
    /// stem, body = contents), sorted by filename.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut docs = Vec::new();
        for path in paths {
            let title = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let body = std::fs::read_to_string(&path)?;
            docs.push(Document { title, url: format!("file://{}", path.display()), body });
        }
        Ok(Self { docs })
    }
}

impl TextSearchBackend for LocalCorpusBackend {
    fn search(&self, query: &str) -> Result<Vec<Document>, BackendError> {
        let query_terms = tokenize(query);
        let mut scored: Vec<(usize, &Document)> = self
            .docs
            .iter()
            .map(|doc| {
                let doc_terms = tokenize(&format!("{} {}", doc.title, doc.body));
                (query_terms.intersection(&doc_terms).count(), doc)
            })
            .filter(|(score, _)| *score > 0)
            .collect();
        // Stable by construction order among ties.
        scored.sort_by_key(|entry| std::cmp::Reverse(entry.0));
        Ok(scored.into_iter().take(TOP_K_RESULTS).map(|(_, d)| d.clone()).collect())
    }
}

#[derive(Serialize)]
struct LiveSearchRequest<'a> {
    query: &'a str,
}

#[derive(Deserialize)]
struct LiveSearchHit {
    title: String,
    url: String,
    #[serde(default)]
    body: String,
}

/// Live web search shim: HTTP JSON API `{query}` -> list of
/// `{title, url, body}`. One automatic retry before surfacing
/// `BackendUnavailable`.
pub struct LiveTextSearch {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl LiveTextSearch {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("client builds");
        Self { endpoint: endpoint.into(), client }
    }

    fn call_once(&self, query: &str) -> Result<Vec<Document>, BackendError> {
        let hits: Vec<LiveSearchHit> = self
            .client
            .post(&self.endpoint)
            .json(&LiveSearchRequest { query })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(hits
            .into_iter()
            .take(TOP_K_RESULTS)
            .map(|h| Document { title: h.title, url: h.url, body: h.body })
            .collect())
    }
}

impl TextSearchBackend for LiveTextSearch {
    fn search(&self, query: &str) -> Result<Vec<Document>, BackendError> {
        self.call_once(query).or_else(|_| self.call_once(query))
    }
}
