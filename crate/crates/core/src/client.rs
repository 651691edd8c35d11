//! Chat-completion and policy client contracts.
//!
//! The kernel never tokenizes or samples: everything model-shaped sits
//! behind these two traits. The summarizer and judge share the same
//! chat-completion contract (request `{system, messages[]}`, response
//! `{text}`, temperature fixed at 0.0); the policy contract additionally
//! carries a max-token field and returns token counts and optional
//! per-token log-probabilities.

use crate::transcript::PolicyRequest;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

/// Transport-level failure, surfaced after the automatic retry. Never
/// silently scored.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport failure: {message}")]
pub struct TransportError {
    pub message: String,
}

impl TransportError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String, TransportError>;
}

/// Chat client backed by a closure; used for scripted summarizers/judges.
pub struct FnChatClient<F>(pub F);

impl<F> ChatClient for FnChatClient<F>
where
    F: Fn(&str, &[ChatMessage]) -> Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String, TransportError> {
        (self.0)(system, messages)
    }
}

/// Echoes the last user message back; the identity summarizer.
pub struct EchoChatClient;

impl ChatClient for EchoChatClient {
    fn complete(&self, _system: &str, messages: &[ChatMessage]) -> Result<String, TransportError> {
        Ok(messages.last().map(|m| m.content.clone()).unwrap_or_default())
    }
}

#[derive(Serialize)]
struct ChatHttpRequest<'a> {
    system: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatHttpResponse {
    text: String,
}

/// HTTP chat client with a per-call timeout and one automatic retry.
pub struct HttpChatClient {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("client builds");
        Self { endpoint: endpoint.into(), client }
    }

    fn call_once(&self, system: &str, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let body = ChatHttpRequest { system, messages, temperature: 0.0 };
        let response = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| TransportError { message: e.to_string() })?;
        let parsed: ChatHttpResponse =
            response.json().map_err(|e| TransportError { message: e.to_string() })?;
        Ok(parsed.text)
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String, TransportError> {
        self.call_once(system, messages)
            .or_else(|_| self.call_once(system, messages))
    }
}

// ---------------------------------------------------------------------------
// Policy client
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub text: String,
    /// Tokens the policy reports having generated; must not exceed the
    /// budget it was given.
    pub token_count: u64,
    /// Per-token log-probabilities aligned to the generated text, when the
    /// serving stack provides them.
    pub logprobs: Option<Vec<f64>>,
}

pub trait PolicyClient: Send + Sync {
    fn generate(
        &self,
        request: &PolicyRequest,
        max_tokens: u64,
        seed: u64,
    ) -> Result<PolicyResponse, TransportError>;
}

/// Policy backed by a closure over (request, budget, seed, turn index).
/// The turn index counts assistant messages already in the request.
pub struct FnPolicy<F>(pub F);

impl<F> PolicyClient for FnPolicy<F>
where
    F: Fn(&PolicyRequest, u64, u64, usize) -> Result<PolicyResponse, TransportError> + Send + Sync,
{
    fn generate(
        &self,
        request: &PolicyRequest,
        max_tokens: u64,
        seed: u64,
    ) -> Result<PolicyResponse, TransportError> {
        let turn = request
            .messages
            .iter()
            .filter(|m| m.role == crate::transcript::Role::Assistant)
            .count();
        (self.0)(request, max_tokens, seed, turn)
    }
}

/// Deterministic scripted policy: emits `turns[i]` on turn `i`, repeating
/// the last entry once the script runs out.
pub struct ScriptedPolicy {
    pub turns: Vec<String>,
    pub tokens_per_turn: u64,
    calls: AtomicU64,
}

impl ScriptedPolicy {
    pub fn new(turns: Vec<String>, tokens_per_turn: u64) -> Self {
        assert!(!turns.is_empty(), "script needs at least one turn");
        Self { turns, tokens_per_turn, calls: AtomicU64::new(0) }
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl PolicyClient for ScriptedPolicy {
    fn generate(
        &self,
        request: &PolicyRequest,
        max_tokens: u64,
        _seed: u64,
    ) -> Result<PolicyResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let turn = request
            .messages
            .iter()
            .filter(|m| m.role == crate::transcript::Role::Assistant)
            .count();
        let text = self.turns.get(turn).unwrap_or_else(|| self.turns.last().unwrap()).clone();
        Ok(PolicyResponse {
            text,
            token_count: self.tokens_per_turn.min(max_tokens),
            logprobs: None,
        })
    }
}

#[derive(Serialize)]
struct PolicyHttpRequest<'a> {
    #[serde(flatten)]
    request: &'a PolicyRequest,
    max_tokens: u64,
    seed: u64,
    temperature: f64,
}

/// HTTP policy client with one automatic retry.
pub struct HttpPolicyClient {
    endpoint: String,
    client: reqwest::blocking::Client,
    pub temperature: f64,
}

impl HttpPolicyClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("client builds");
        Self { endpoint: endpoint.into(), client, temperature: 0.0 }
    }

    fn call_once(
        &self,
        request: &PolicyRequest,
        max_tokens: u64,
        seed: u64,
    ) -> Result<PolicyResponse, TransportError> {
        let body = PolicyHttpRequest { request, max_tokens, seed, temperature: self.temperature };
        let response = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| TransportError { message: e.to_string() })?;
        response.json().map_err(|e| TransportError { message: e.to_string() })
    }
}

impl PolicyClient for HttpPolicyClient {
    fn generate(
        &self,
        request: &PolicyRequest,
        max_tokens: u64,
        seed: u64,
    ) -> Result<PolicyResponse, TransportError> {
        self.call_once(request, max_tokens, seed)
            .or_else(|_| self.call_once(request, max_tokens, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    // Minimal one-shot HTTP responder for exercising the retry path.
    fn serve_responses(responses: Vec<String>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for body in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let response = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        format!("http://{addr}/v1/chat")
    }

    #[test]
    fn http_chat_client_round_trip() {
        let url = serve_responses(vec![r#"{"text":"summary here"}"#.to_string()]);
        let client = HttpChatClient::new(url, Duration::from_secs(5));
        let out = client.complete("sys", &[ChatMessage::user("page")]).unwrap();
        assert_eq!(out, "summary here");
    }

    #[test]
    fn http_chat_client_retries_once_on_bad_payload() {
        let url = serve_responses(vec![
            "not json".to_string(),
            r#"{"text":"second try"}"#.to_string(),
        ]);
        let client = HttpChatClient::new(url, Duration::from_secs(5));
        let out = client.complete("sys", &[ChatMessage::user("page")]).unwrap();
        assert_eq!(out, "second try");
    }

    #[test]
    fn scripted_policy_repeats_last_turn() {
        let policy = ScriptedPolicy::new(vec!["a".into(), "b".into()], 10);
        let req = PolicyRequest { system: "s".into(), messages: vec![] };
        let r = policy.generate(&req, 100, 0).unwrap();
        assert_eq!(r.text, "a");
        assert_eq!(r.token_count, 10);
    }
}
