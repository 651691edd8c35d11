//! The tool sandbox: image crop, text search, and reverse image search
//! behind a uniform executor.
//!
//! Tool execution errors that reflect a bad call (out-of-range index,
//! invalid bbox, no results) are recoverable: the rollout engine injects
//! them as error-text observations and the policy keeps its turn. Backend
//! unavailability is infrastructure failure and aborts the trajectory.

pub mod cache;
pub mod crop;
pub mod image_search;
pub mod text_search;

use crate::client::ChatClient;
use crate::schema::{SchemaRegistry, SchemaViolation};
use crate::transcript::{ContentPart, ImageRegistry, Observation, ToolCall};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

pub use cache::ToolCache;
pub use crop::{crop_image, BBox, InvalidBBox};
pub use image_search::ImageSearchBackend;
pub use text_search::{Document, SummarizedObservation, TextSearchBackend};

/// One search hit: title plus optional thumbnail payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    #[serde(default)]
    pub url: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub thumbnail: Option<crate::transcript::ImagePayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Live backend unreachable after retry; retriable infrastructure noise.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// Offline run hit a query that was never prefetched.
    #[error("missing cache entry {0}")]
    MissingCacheEntry(String),
    /// Image-search cache has no entry for this image hash.
    #[error("cache miss for key {0}")]
    CacheMiss(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToolError {
    #[error("image index {index} out of range (registry size {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error(transparent)]
    InvalidBBox(#[from] InvalidBBox),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("tool `{0}` is not executable here")]
    UnknownTool(String),
    #[error("malformed arguments for `{tool}`: {message}")]
    BadArguments { tool: String, message: String },
}

impl ToolError {
    /// Infrastructure failures abort the trajectory; everything else is
    /// injected as an error observation and consumes the turn.
    pub fn is_infrastructure(&self) -> bool {
        matches!(
            self,
            ToolError::Backend(BackendError::Unavailable(_))
                | ToolError::Backend(BackendError::MissingCacheEntry(_))
                | ToolError::Backend(BackendError::CacheMiss(_))
        )
    }
}

/// Checks a tool call against the registered schema set.
pub fn validate_tool_call(call: &ToolCall, schemas: &SchemaRegistry) -> Result<(), SchemaViolation> {
    match schemas.get(&call.name) {
        Some(schema) => schema.validate(&call.arguments),
        None => Err(SchemaViolation::UnexpectedParameter(call.name.clone())),
    }
}

/// Crops `registry[image_index]` and registers the result as the next index.
pub fn resolve_crop(call: &ToolCall, registry: &mut ImageRegistry) -> Result<Observation, ToolError> {
    debug_assert_eq!(call.name, crate::schema::CROP_IMAGE);
    let bbox_values: Vec<f64> = call.arguments["bbox"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
        .unwrap_or_default();
    if bbox_values.len() != 4 {
        return Err(ToolError::BadArguments {
            tool: call.name.clone(),
            message: "bbox must be 4 numbers".into(),
        });
    }
    let index = call.arguments["image_index"].as_u64().unwrap_or(0) as usize;
    let image = registry
        .payload(index)
        .ok_or(ToolError::IndexOutOfRange { index, size: registry.len() })?;
    let bbox = BBox::from_slice(&bbox_values)?;
    let cropped = crop_image(&image, &bbox);
    let new_index = registry.register(cropped);
    Ok(Observation {
        parts: vec![
            ContentPart::text(format!(
                "Cropped region of image {index} is now available as image {new_index}."
            )),
            ContentPart::image(new_index),
        ],
    })
}

/// Runs reverse image search on `registry[image_index]`, registering any
/// thumbnails when `include_thumbnails` is set.
pub fn resolve_image_search(
    image_index: usize,
    registry: &mut ImageRegistry,
    backend: &dyn ImageSearchBackend,
    include_thumbnails: bool,
) -> Result<Observation, ToolError> {
    let image = registry
        .payload(image_index)
        .ok_or(ToolError::IndexOutOfRange { index: image_index, size: registry.len() })?;
    let results = backend.search(&image)?;
    if results.is_empty() {
        return Ok(Observation::text_only("No visually similar results were found."));
    }
    let mut parts = Vec::new();
    for (i, result) in results.iter().enumerate() {
        parts.push(ContentPart::text(format!("{}. {}", i + 1, result.title)));
        if include_thumbnails {
            if let Some(thumb) = &result.thumbnail {
                let idx = registry.register(thumb.clone());
                parts.push(ContentPart::image(idx));
            }
        }
    }
    Ok(Observation { parts })
}

/// Plain-text rendering of cached image-search results, as injected into
/// the RAG workflow prompt.
pub fn format_search_results_text(results: &[SearchResult]) -> String {
    if results.is_empty() {
        return "No visually similar results were found.".to_string();
    }
    results
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. {}", i + 1, r.title))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Per-tool invocation counters, shared across trajectories.
#[derive(Debug, Default)]
pub struct ToolCallCounters {
    pub crop: AtomicU64,
    pub text_search: AtomicU64,
    pub image_search: AtomicU64,
}

impl ToolCallCounters {
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.crop.load(Ordering::SeqCst),
            self.text_search.load(Ordering::SeqCst),
            self.image_search.load(Ordering::SeqCst),
        )
    }

    pub fn total(&self) -> u64 {
        let (a, b, c) = self.snapshot();
        a + b + c
    }
}

/// Executes schema-valid tool calls against the configured backends.
///
/// Backends and the summarizer are shared across rollout workers; the
/// image registry is per-trajectory and passed in by the caller.
pub struct Toolbox {
    pub text_backend: Box<dyn TextSearchBackend>,
    pub image_backend: Box<dyn ImageSearchBackend>,
    pub summarizer: Box<dyn ChatClient>,
    /// Whether image-search thumbnails are fed back to the policy as
    /// images, or only titles as text.
    pub include_thumbnails: bool,
    pub counters: ToolCallCounters,
}

impl Toolbox {
    pub fn new(
        text_backend: Box<dyn TextSearchBackend>,
        image_backend: Box<dyn ImageSearchBackend>,
        summarizer: Box<dyn ChatClient>,
    ) -> Self {
        Self {
            text_backend,
            image_backend,
            summarizer,
            include_thumbnails: true,
            counters: ToolCallCounters::default(),
        }
    }

    /// Executes one parsed, schema-valid tool call. `question` feeds the
    /// summarizer prompt for text search.
    pub fn execute(
        &self,
        call: &ToolCall,
        registry: &mut ImageRegistry,
        question: &str,
    ) -> Result<Observation, ToolError> {
        match call.name.as_str() {
            crate::schema::CROP_IMAGE => {
                self.counters.crop.fetch_add(1, Ordering::SeqCst);
                resolve_crop(call, registry)
            }
            crate::schema::WEB_SEARCH => {
                self.counters.text_search.fetch_add(1, Ordering::SeqCst);
                let query = call.arguments["query"].as_str().unwrap_or_default();
                if query.is_empty() {
                    return Err(ToolError::BadArguments {
                        tool: call.name.clone(),
                        message: "query must be non-empty".into(),
                    });
                }
                let summary = text_search::text_search(
                    query,
                    self.text_backend.as_ref(),
                    self.summarizer.as_ref(),
                    question,
                )?;
                Ok(Observation::text_only(summary.observation_text()))
            }
            crate::schema::IMAGE_SEARCH => {
                self.counters.image_search.fetch_add(1, Ordering::SeqCst);
                // The tool takes no arguments; it searches the original
                // input image, which is always registry index 1.
                resolve_image_search(1, registry, self.image_backend.as_ref(), self.include_thumbnails)
            }
            other => Err(ToolError::UnknownTool(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::EchoChatClient;
    use crate::toolbox::cache::ToolCache;
    use crate::toolbox::image_search::CachedImageSearch;
    use crate::toolbox::text_search::LocalCorpusBackend;
    use crate::transcript::ImagePayload;
    use serde_json::json;

    fn gradient(width: u32, height: u32) -> ImagePayload {
        let mut pixels = Vec::new();
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&[(x % 256) as u8, (y % 256) as u8, 0]);
            }
        }
        ImagePayload::new(width, height, pixels)
    }

    fn crop_call(bbox: [f64; 4], index: usize) -> ToolCall {
        ToolCall {
            name: "crop_image".into(),
            arguments: json!({"bbox": bbox, "image_index": index}),
        }
    }

    #[test]
    fn crop_registers_next_index() {
        let mut registry = ImageRegistry::new(gradient(10, 10));
        let obs = resolve_crop(&crop_call([0.0, 0.0, 0.5, 0.5], 1), &mut registry).unwrap();
        assert_eq!(registry.len(), 2);
        assert!(obs.parts.iter().any(|p| matches!(p, ContentPart::ImageRef { image_index: 2 })));
        match &obs.parts[0] {
            ContentPart::Text { text } => assert!(text.contains("image 2")),
            _ => panic!("expected text note"),
        }
    }

    #[test]
    fn crop_out_of_range_index() {
        let mut registry = ImageRegistry::new(gradient(10, 10));
        let err = resolve_crop(&crop_call([0.0, 0.0, 0.5, 0.5], 2), &mut registry).unwrap_err();
        assert_eq!(err, ToolError::IndexOutOfRange { index: 2, size: 1 });
    }

    #[test]
    fn chained_crop_equals_composed_crop() {
        let source = gradient(40, 30);
        // First crop [0.25, 0.2, 0.75, 0.8] on a 40x30 image lands exactly on
        // pixel bounds: columns 10..30, rows 6..24 (a 20x18 buffer).
        let mut registry = ImageRegistry::new(source.clone());
        resolve_crop(&crop_call([0.25, 0.2, 0.75, 0.8], 1), &mut registry).unwrap();
        // Second crop [0.5, 0.5, 1.0, 1.0] of the 20x18 crop: columns 10..20,
        // rows 9..18 of the intermediate, i.e. columns 20..30, rows 15..24 of
        // the source. The composed bbox on the source is [0.5, 0.5, 0.75, 0.8].
        resolve_crop(&crop_call([0.5, 0.5, 1.0, 1.0], 2), &mut registry).unwrap();
        let chained = registry.payload(3).unwrap();
        let composed =
            crop_image(&source, &BBox::new(0.5, 0.5, 0.75, 0.8).unwrap());
        assert_eq!(chained, composed);
    }

    #[test]
    fn image_search_takes_the_original_image() {
        let dir = tempfile::tempdir().unwrap();
        let cache_backend = CachedImageSearch::new(ToolCache::new(dir.path()).unwrap());
        let original = gradient(8, 8);
        cache_backend
            .store(
                &original,
                &[SearchResult {
                    title: "hit".into(),
                    url: String::new(),
                    snippet: String::new(),
                    thumbnail: Some(ImagePayload::solid(2, 2, [5; 3])),
                }],
            )
            .unwrap();
        let toolbox = Toolbox::new(
            Box::new(LocalCorpusBackend::new(vec![])),
            Box::new(cache_backend),
            Box::new(EchoChatClient),
        );
        let mut registry = ImageRegistry::new(original);
        let call = ToolCall { name: "image_search".into(), arguments: json!({}) };
        let obs = toolbox.execute(&call, &mut registry, "q").unwrap();
        assert!(obs.parts.iter().any(|p| matches!(p, ContentPart::ImageRef { .. })));
        assert_eq!(registry.len(), 2);
        assert_eq!(toolbox.counters.snapshot(), (0, 0, 1));
    }

    #[test]
    fn image_search_empty_entry_reports_no_similar_results() {
        let dir = tempfile::tempdir().unwrap();
        let backend = CachedImageSearch::new(ToolCache::new(dir.path()).unwrap());
        let image = gradient(4, 4);
        backend.store(&image, &[]).unwrap();
        let mut registry = ImageRegistry::new(image);
        let obs = resolve_image_search(1, &mut registry, &backend, true).unwrap();
        assert_eq!(obs, Observation::text_only("No visually similar results were found."));
    }

    #[test]
    fn validate_tool_call_unknown_tool() {
        let call = ToolCall { name: "ocr".into(), arguments: json!({}) };
        assert!(validate_tool_call(&call, &crate::schema::agentic_registry()).is_err());
    }

    #[test]
    fn cache_determinism_across_identical_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ToolCache::new(dir.path()).unwrap();
        let backend = CachedImageSearch::new(ToolCache::open(dir.path()));
        let image = gradient(6, 6);
        let results = vec![SearchResult {
            title: "t".into(),
            url: "u".into(),
            snippet: "s".into(),
            thumbnail: None,
        }];
        backend.store(&image, &results).unwrap();
        let key = CachedImageSearch::cache_key(&image);
        assert_eq!(cache.get_raw(&key).unwrap(), cache.get_raw(&key).unwrap());
    }
}
