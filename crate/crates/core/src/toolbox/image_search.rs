//! Reverse image search backends.
//!
//! The cached backend is content-addressed by image hash: an entry present
//! with an empty result list means the search genuinely returned nothing,
//! while an absent entry is a `CacheMiss` and must not be conflated with
//! empty results.

use crate::toolbox::cache::ToolCache;
use crate::toolbox::{BackendError, SearchResult};
use crate::transcript::ImagePayload;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::time::Duration;

pub const TOP_K_RESULTS: usize = 5;

pub trait ImageSearchBackend: Send + Sync {
    fn search(&self, image: &ImagePayload) -> Result<Vec<SearchResult>, BackendError>;
}

pub struct CachedImageSearch {
    cache: ToolCache,
}

impl CachedImageSearch {
    pub fn new(cache: ToolCache) -> Self {
        Self { cache }
    }

    pub fn cache_key(image: &ImagePayload) -> String {
        ToolCache::key(crate::schema::IMAGE_SEARCH, &json!({}), Some(&image.content_hash()))
    }

    pub fn store(&self, image: &ImagePayload, results: &[SearchResult]) -> std::io::Result<bool> {
        self.cache.put(&Self::cache_key(image), &results.to_vec())
    }
}

impl ImageSearchBackend for CachedImageSearch {
    fn search(&self, image: &ImagePayload) -> Result<Vec<SearchResult>, BackendError> {
        let key = Self::cache_key(image);
        self.cache
            .get::<Vec<SearchResult>>(&key)
            .ok_or(BackendError::CacheMiss(key))
    }
}

#[derive(Serialize)]
struct LiveImageSearchRequest {
    width: u32,
    height: u32,
    pixels_hex: String,
}

#[derive(Deserialize)]
struct LiveImageSearchHit {
    title: String,
    #[serde(default)]
    url: String,
    #[serde(default)]
    snippet: String,
    #[serde(default)]
    thumbnail: Option<ImagePayload>,
}

/// Live reverse-image-search shim: image upload -> list of
/// `{title, thumbnail}`. One automatic retry.
pub struct LiveImageSearch {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl LiveImageSearch {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("client builds");
        Self { endpoint: endpoint.into(), client }
    }

    fn call_once(&self, image: &ImagePayload) -> Result<Vec<SearchResult>, BackendError> {
        let body = LiveImageSearchRequest {
            width: image.width,
            height: image.height,
            pixels_hex: hex::encode(&image.pixels),
        };
        let hits: Vec<LiveImageSearchHit> = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(hits
            .into_iter()
            .take(TOP_K_RESULTS)
            .map(|h| SearchResult {
                title: h.title,
                url: h.url,
                snippet: h.snippet,
                thumbnail: h.thumbnail,
            })
            .collect())
    }
}

impl ImageSearchBackend for LiveImageSearch {
    fn search(&self, image: &ImagePayload) -> Result<Vec<SearchResult>, BackendError> {
        self.call_once(image).or_else(|_| self.call_once(image))
    }
}
