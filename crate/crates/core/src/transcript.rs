//! Interaction history and the strict model-output protocol.
//!
//! A policy emission is accepted iff it is exactly one `<think>` block
//! followed by exactly one `<tool_call>` or `<answer>` block, with nothing
//! but whitespace outside the tags. The grammar is strict on purpose: the
//! format reward must be mechanically decidable.

use crate::canonical::{canonical_json, sha256_hex};
use crate::schema::{SchemaRegistry, SchemaViolation};
use serde::{Deserialize, Serialize};

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// A raw RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl ImagePayload {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), (width as usize) * (height as usize) * 3, "pixel buffer size");
        Self { width, height, pixels }
    }

    /// Solid-color image, handy for fixtures.
    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity((width * height) as usize * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y as usize) * (self.width as usize) + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Content hash over dimensions and pixel bytes.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(8 + self.pixels.len());
        bytes.extend_from_slice(&self.width.to_be_bytes());
        bytes.extend_from_slice(&self.height.to_be_bytes());
        bytes.extend_from_slice(&self.pixels);
        sha256_hex(&bytes)
    }
}

impl Serialize for ImagePayload {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("ImagePayload", 3)?;
        s.serialize_field("width", &self.width)?;
        s.serialize_field("height", &self.height)?;
        s.serialize_field("pixels_hex", &hex::encode(&self.pixels))?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for ImagePayload {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            width: u32,
            height: u32,
            pixels_hex: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        let pixels = hex::decode(&raw.pixels_hex).map_err(serde::de::Error::custom)?;
        if pixels.len() != (raw.width as usize) * (raw.height as usize) * 3 {
            return Err(serde::de::Error::custom("pixel buffer size mismatch"));
        }
        Ok(ImagePayload { width: raw.width, height: raw.height, pixels })
    }
}

/// Dimensions plus content hash; what transcripts persist instead of pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub width: u32,
    pub height: u32,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImageEntry {
    meta: ImageMeta,
    #[serde(skip)]
    pixels: Option<Vec<u8>>,
}

/// Append-only, 1-based image registry. Index 1 is always the original
/// input image; crop results and thumbnails take the next free index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ImageRegistry {
    entries: Vec<ImageEntry>,
}

impl ImageRegistry {
    pub fn new(original: ImagePayload) -> Self {
        let mut registry = Self::default();
        registry.register(original);
        registry
    }

    /// Registers a payload and returns its 1-based index.
    pub fn register(&mut self, payload: ImagePayload) -> usize {
        let meta = ImageMeta {
            width: payload.width,
            height: payload.height,
            sha256: payload.content_hash(),
        };
        self.entries.push(ImageEntry { meta, pixels: Some(payload.pixels) });
        self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn meta(&self, index: usize) -> Option<&ImageMeta> {
        index.checked_sub(1).and_then(|i| self.entries.get(i)).map(|e| &e.meta)
    }

    /// Full payload for an index; `None` when the index is out of range or
    /// the pixels were not rehydrated after deserialization.
    pub fn payload(&self, index: usize) -> Option<ImagePayload> {
        let entry = index.checked_sub(1).and_then(|i| self.entries.get(i))?;
        let pixels = entry.pixels.clone()?;
        Some(ImagePayload { width: entry.meta.width, height: entry.meta.height, pixels })
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= 1 && index <= self.entries.len()
    }

    pub fn metas(&self) -> impl Iterator<Item = &ImageMeta> {
        self.entries.iter().map(|e| &e.meta)
    }

    /// Reattaches pixel data to an entry after deserialization. The payload
    /// must match the recorded metadata and content hash.
    pub fn attach_pixels(
        &mut self,
        index: usize,
        payload: ImagePayload,
    ) -> Result<(), TranscriptError> {
        let size = self.entries.len();
        let entry = index
            .checked_sub(1)
            .and_then(|i| self.entries.get_mut(i))
            .ok_or(TranscriptError::UnresolvedImageIndex(index, size))?;
        if payload.content_hash() != entry.meta.sha256 {
            return Err(TranscriptError::UnresolvedImageIndex(index, size));
        }
        entry.pixels = Some(payload.pixels);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Task items
// ---------------------------------------------------------------------------

/// One task instance: a question over one or more input images with its
/// ground-truth answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptItem {
    pub id: String,
    pub question: String,
    pub images: Vec<ImagePayload>,
    pub ground_truth: String,
    /// Alternative acceptable answers.
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub domain_tag: Option<String>,
}

impl PromptItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("prompt item id must be non-empty".into());
        }
        if self.images.is_empty() {
            return Err(format!("item {}: multimodal items need at least one image", self.id));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageRef { image_index: usize },
}

impl ContentPart {
    pub fn text(s: impl Into<String>) -> Self {
        ContentPart::Text { text: s.into() }
    }

    pub fn image(index: usize) -> Self {
        ContentPart::ImageRef { image_index: index }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall(ToolCall),
    FinalAnswer(FinalAnswer),
}

/// One parsed policy emission: a reasoning trace plus exactly one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTurn {
    pub think: String,
    pub action: Action,
    pub raw: String,
}

/// Tool output appended to the transcript: text, image refs, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Observation {
    pub parts: Vec<ContentPart>,
}

impl Observation {
    pub fn text_only(text: impl Into<String>) -> Self {
        Observation { parts: vec![ContentPart::text(text)] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptEvent {
    User { parts: Vec<ContentPart> },
    Model(ModelTurn),
    Observation(Observation),
}

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranscriptError {
    #[error("cannot append after a final answer")]
    AppendAfterAnswer,
    #[error("tool-call turn must be followed by an observation")]
    ExpectedObservation,
    #[error("image index {0} does not resolve in a registry of size {1}")]
    UnresolvedImageIndex(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: u32,
    pub system_prompt: String,
    pub events: Vec<TranscriptEvent>,
    pub registry: ImageRegistry,
}

impl Transcript {
    pub fn new(system_prompt: impl Into<String>, registry: ImageRegistry) -> Self {
        Self {
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
            system_prompt: system_prompt.into(),
            events: Vec::new(),
            registry,
        }
    }

    pub fn registry_mut(&mut self) -> &mut ImageRegistry {
        &mut self.registry
    }

    pub fn is_answered(&self) -> bool {
        matches!(
            self.events.last(),
            Some(TranscriptEvent::Model(ModelTurn { action: Action::FinalAnswer(_), .. }))
        )
    }

    fn pending_tool_call(&self) -> bool {
        matches!(
            self.events.last(),
            Some(TranscriptEvent::Model(ModelTurn { action: Action::ToolCall(_), .. }))
        )
    }

    fn check_parts(&self, parts: &[ContentPart]) -> Result<(), TranscriptError> {
        for part in parts {
            if let ContentPart::ImageRef { image_index } = part {
                if !self.registry.contains(*image_index) {
                    return Err(TranscriptError::UnresolvedImageIndex(
                        *image_index,
                        self.registry.len(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Appends an event, enforcing model-turn/observation alternation and
    /// the no-event-after-answer rule.
    pub fn append_event(&mut self, event: TranscriptEvent) -> Result<(), TranscriptError> {
        if self.is_answered() {
            return Err(TranscriptError::AppendAfterAnswer);
        }
        match &event {
            TranscriptEvent::Observation(obs) => {
                if !self.pending_tool_call() {
                    return Err(TranscriptError::ExpectedObservation);
                }
                self.check_parts(&obs.parts)?;
            }
            TranscriptEvent::User { parts } => {
                self.check_parts(parts)?;
            }
            TranscriptEvent::Model(_) => {
                if self.pending_tool_call() {
                    return Err(TranscriptError::ExpectedObservation);
                }
            }
        }
        self.events.push(event);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
pub enum ParseError {
    #[error("emission must begin with a <think> block: {span:?}")]
    MissingThink { span: String },
    #[error("no tool call or answer block found: {span:?}")]
    MissingAction { span: String },
    #[error("more than one action block: {span:?}")]
    MultipleActions { span: String },
    #[error("stray text outside tagged blocks: {span:?}")]
    StrayText { span: String },
    #[error("tool call is not a valid JSON call object: {message} in {span:?}")]
    BadJson { span: String, message: String },
    #[error("unknown tool `{name}`")]
    UnknownTool { name: String },
    #[error("tool `{tool}` arguments rejected: {violation}")]
    SchemaViolation { tool: String, violation: SchemaViolation },
}

fn clip_span(s: &str) -> String {
    const MAX: usize = 120;
    if s.len() <= MAX {
        s.to_string()
    } else {
        let mut end = MAX;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

/// A complete `<tag>…</tag>` block located in a string.
struct Block {
    start: usize,
    end: usize,
    tag: &'static str,
    inner: String,
}

/// Finds every complete, non-overlapping action block in order of
/// appearance. An opening tag without its closer is left to the stray-text
/// rule: incomplete blocks are plain text.
fn find_action_blocks(s: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut pos = 0;
    while pos < s.len() {
        let next = ["tool_call", "answer"]
            .iter()
            .filter_map(|tag| {
                let open = format!("<{tag}>");
                let close = format!("</{tag}>");
                let start = s[pos..].find(&open).map(|i| pos + i)?;
                let inner_start = start + open.len();
                let end_rel = s[inner_start..].find(&close)?;
                Some(Block {
                    start,
                    end: inner_start + end_rel + close.len(),
                    tag: if *tag == "tool_call" { "tool_call" } else { "answer" },
                    inner: s[inner_start..inner_start + end_rel].to_string(),
                })
            })
            .min_by_key(|b| b.start);
        match next {
            Some(block) => {
                pos = block.end;
                blocks.push(block);
            }
            None => break,
        }
    }
    blocks
}

fn parse_tool_call(inner: &str, schemas: &SchemaRegistry) -> Result<ToolCall, ParseError> {
    let inner = inner.trim();
    let value: serde_json::Value = serde_json::from_str(inner).map_err(|e| ParseError::BadJson {
        span: clip_span(inner),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| ParseError::BadJson {
        span: clip_span(inner),
        message: "expected a JSON object".into(),
    })?;
    let name = obj.get("name").and_then(|v| v.as_str()).ok_or_else(|| ParseError::BadJson {
        span: clip_span(inner),
        message: "missing string field `name`".into(),
    })?;
    for key in obj.keys() {
        if key != "name" && key != "arguments" {
            return Err(ParseError::BadJson {
                span: clip_span(inner),
                message: format!("unexpected field `{key}`"),
            });
        }
    }
    let arguments = obj.get("arguments").cloned().unwrap_or_else(|| serde_json::json!({}));
    if !arguments.is_object() {
        return Err(ParseError::BadJson {
            span: clip_span(inner),
            message: "`arguments` must be an object".into(),
        });
    }
    let schema = schemas
        .get(name)
        .ok_or_else(|| ParseError::UnknownTool { name: name.to_string() })?;
    schema
        .validate(&arguments)
        .map_err(|violation| ParseError::SchemaViolation { tool: name.to_string(), violation })?;
    Ok(ToolCall { name: name.to_string(), arguments })
}

/// Parses one full policy emission under the strict tag grammar.
pub fn parse_model_turn(raw: &str, schemas: &SchemaRegistry) -> Result<ModelTurn, ParseError> {
    let trimmed = raw.trim();
    if !trimmed.starts_with("<think>") {
        return Err(ParseError::MissingThink { span: clip_span(trimmed) });
    }
    let after_open = &trimmed["<think>".len()..];
    let close = after_open
        .find("</think>")
        .ok_or_else(|| ParseError::MissingThink { span: clip_span(trimmed) })?;
    let think = after_open[..close].trim().to_string();
    if think.is_empty() {
        return Err(ParseError::MissingThink { span: clip_span(trimmed) });
    }
    let rest = after_open[close + "</think>".len()..].trim();
    if rest.is_empty() {
        return Err(ParseError::MissingAction { span: clip_span(trimmed) });
    }
    let blocks = find_action_blocks(rest);
    match blocks.len() {
        0 => Err(ParseError::MissingAction { span: clip_span(rest) }),
        1 => {
            let block = &blocks[0];
            if !rest[..block.start].trim().is_empty() || !rest[block.end..].trim().is_empty() {
                return Err(ParseError::StrayText { span: clip_span(rest) });
            }
            let action = match block.tag {
                "tool_call" => Action::ToolCall(parse_tool_call(&block.inner, schemas)?),
                _ => {
                    let text = block.inner.trim().to_string();
                    if text.is_empty() {
                        return Err(ParseError::MissingAction { span: clip_span(rest) });
                    }
                    Action::FinalAnswer(FinalAnswer { text })
                }
            };
            Ok(ModelTurn { think, action, raw: raw.to_string() })
        }
        _ => Err(ParseError::MultipleActions { span: clip_span(rest) }),
    }
}

/// Serializes a turn back to protocol text. `parse_model_turn` of the output
/// reproduces the turn (up to `raw`).
pub fn serialize_model_turn(turn: &ModelTurn) -> String {
    match &turn.action {
        Action::ToolCall(call) => {
            let body = serde_json::json!({"name": call.name, "arguments": call.arguments});
            format!("<think>{}</think><tool_call>{}</tool_call>", turn.think, canonical_json(&body))
        }
        Action::FinalAnswer(answer) => {
            format!("<think>{}</think><answer>{}</answer>", turn.think, answer.text)
        }
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowKind {
    Direct,
    Rag,
    Agentic,
}

impl WorkflowKind {
    pub fn system_prompt(&self) -> &'static str {
        match self {
            WorkflowKind::Direct => crate::prompts::DIRECT_SYSTEM,
            WorkflowKind::Rag => crate::prompts::RAG_SYSTEM,
            WorkflowKind::Agentic => crate::prompts::AGENTIC_SYSTEM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

/// A rendered message part: text, or an attachment slot naming the image by
/// registry index and content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenderedPart {
    Text { text: String },
    ImageSlot { image_index: usize, sha256: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedMessage {
    pub role: Role,
    pub parts: Vec<RenderedPart>,
}

/// What the policy client sends: a system prompt plus ordered messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub system: String,
    pub messages: Vec<RenderedMessage>,
}

impl PolicyRequest {
    /// Deterministic byte form of the request.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }
}

fn render_parts(
    parts: &[ContentPart],
    registry: &ImageRegistry,
) -> Result<Vec<RenderedPart>, TranscriptError> {
    parts
        .iter()
        .map(|part| match part {
            ContentPart::Text { text } => Ok(RenderedPart::Text { text: text.clone() }),
            ContentPart::ImageRef { image_index } => {
                let meta = registry.meta(*image_index).ok_or(
                    TranscriptError::UnresolvedImageIndex(*image_index, registry.len()),
                )?;
                Ok(RenderedPart::ImageSlot { image_index: *image_index, sha256: meta.sha256.clone() })
            }
        })
        .collect()
}

/// Serializes the transcript into the message structure the policy client
/// sends. Identical transcripts render byte-identically.
pub fn render_for_policy(transcript: &Transcript) -> Result<PolicyRequest, TranscriptError> {
    let mut messages = Vec::new();
    for event in &transcript.events {
        match event {
            TranscriptEvent::User { parts } => messages.push(RenderedMessage {
                role: Role::User,
                parts: render_parts(parts, &transcript.registry)?,
            }),
            TranscriptEvent::Model(turn) => messages.push(RenderedMessage {
                role: Role::Assistant,
                parts: vec![RenderedPart::Text { text: turn.raw.clone() }],
            }),
            TranscriptEvent::Observation(obs) => messages.push(RenderedMessage {
                role: Role::User,
                parts: render_parts(&obs.parts, &transcript.registry)?,
            }),
        }
    }
    Ok(PolicyRequest { system: transcript.system_prompt.clone(), messages })
}
