//! Content-addressed tool cache.
//!
//! A cache entry is a JSON file named by the SHA-256 of (tool name,
//! canonicalized arguments, image content hash when applicable). Arguments
//! are canonicalized before hashing so cache hits never depend on JSON
//! formatting.

use crate::canonical::{canonical_json, sha256_hex};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use std::fs;
use std::io;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct ToolCache {
    dir: PathBuf,
}

impl ToolCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn open(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &PathBuf {
        &self.dir
    }

    /// Cache key for a tool invocation.
    pub fn key(tool: &str, arguments: &serde_json::Value, image_hash: Option<&str>) -> String {
        let mut descriptor = json!({
            "tool": tool,
            "arguments": arguments,
        });
        if let Some(hash) = image_hash {
            descriptor["image_sha256"] = json!(hash);
        }
        sha256_hex(canonical_json(&descriptor).as_bytes())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path_for(key).exists()
    }

    pub fn get_raw(&self, key: &str) -> Option<Vec<u8>> {
        fs::read(self.path_for(key)).ok()
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let bytes = self.get_raw(key)?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Writes an entry in canonical form. Existing keys are left untouched
    /// so repeated prefetches are idempotent.
    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> io::Result<bool> {
        let path = self.path_for(key);
        if path.exists() {
            return Ok(false);
        }
        let value = serde_json::to_value(value).map_err(io::Error::other)?;
        fs::write(path, canonical_json(&value).as_bytes())?;
        Ok(true)
    }

    pub fn keys(&self) -> io::Result<Vec<String>> {
        let mut keys = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".json") {
                keys.push(stem.to_string());
            }
        }
        keys.sort();
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_ignores_argument_formatting() {
        let a: serde_json::Value =
            serde_json::from_str(r#"{"image_index": 1, "bbox": [0.1, 0.2, 0.5, 0.8]}"#).unwrap();
        let b: serde_json::Value =
            serde_json::from_str(r#"{"bbox":[0.10,0.2,0.5,0.80],"image_index":1.0}"#).unwrap();
        assert_eq!(ToolCache::key("crop_image", &a, None), ToolCache::key("crop_image", &b, None));
    }

    #[test]
    fn key_distinguishes_image_hash() {
        let args = serde_json::json!({});
        let a = ToolCache::key("image_search", &args, Some("aaa"));
        let b = ToolCache::key("image_search", &args, Some("bbb"));
        assert_ne!(a, b);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ToolCache::new(dir.path()).unwrap();
        let key = ToolCache::key("web_search", &serde_json::json!({"query": "x"}), None);
        cache.put(&key, &serde_json::json!({"titles": ["a", "b"]})).unwrap();
        let first = cache.get_raw(&key).unwrap();
        let second = cache.get_raw(&key).unwrap();
        assert_eq!(first, second);
        // Re-put does not rewrite.
        assert!(!cache.put(&key, &serde_json::json!({"titles": []})).unwrap());
        assert_eq!(cache.get_raw(&key).unwrap(), first);
    }
}
