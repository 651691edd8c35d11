//! On-disk persistence: append-only trajectory logs and a
//! content-addressed image blob store.
//!
//! Trajectories serialize one-per-line as JSON so runs can be resumed,
//! diffed, and replayed byte-for-byte. Image pixel data lives outside the
//! transcript in a blob directory keyed by content hash; transcripts carry
//! only image metadata and can be rehydrated from the blob store.

use crate::rollout::Trajectory;
use crate::transcript::{ImagePayload, ImageRegistry};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing blob {hash}")]
    MissingBlob { hash: String },
    #[error("blob content hash mismatch: expected {expected}, got {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error(transparent)]
    Transcript(#[from] crate::transcript::TranscriptError),
}

/// Append-only JSONL log of trajectories.
pub struct TrajectoryStore {
    path: PathBuf,
}

impl TrajectoryStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, trajectory: &Trajectory) -> Result<(), StoreError> {
        let line = serde_json::to_string(trajectory)
            .map_err(|e| StoreError::Malformed { line: 0, message: e.to_string() })?;
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(file, "{line}")?;
        Ok(())
    }

    pub fn read_all(&self) -> Result<Vec<Trajectory>, StoreError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(File::open(&self.path)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let trajectory = serde_json::from_str(&line)
                .map_err(|e| StoreError::Malformed { line: i + 1, message: e.to_string() })?;
            out.push(trajectory);
        }
        Ok(out)
    }
}

/// Content-addressed store of raw RGB image blobs, keyed by the image
/// content hash.
pub struct BlobStore {
    dir: PathBuf,
}

impl BlobStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn blob_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    /// Stores the image, returning its content hash. Writing the same
    /// content twice is a no-op.
    pub fn put(&self, image: &ImagePayload) -> Result<String, StoreError> {
        let hash = image.content_hash();
        let path = self.blob_path(&hash);
        if !path.exists() {
            let bytes = serde_json::to_vec(image)
                .map_err(|e| StoreError::Malformed { line: 0, message: e.to_string() })?;
            fs::write(path, bytes)?;
        }
        Ok(hash)
    }

    pub fn get(&self, hash: &str) -> Result<ImagePayload, StoreError> {
        let path = self.blob_path(hash);
        if !path.exists() {
            return Err(StoreError::MissingBlob { hash: hash.to_string() });
        }
        let bytes = fs::read(&path)?;
        let image: ImagePayload = serde_json::from_slice(&bytes)
            .map_err(|e| StoreError::Malformed { line: 0, message: e.to_string() })?;
        let actual = image.content_hash();
        if actual != hash {
            return Err(StoreError::HashMismatch { expected: hash.to_string(), actual });
        }
        Ok(image)
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.blob_path(hash).exists()
    }

    /// Writes every pixel-bearing entry of the registry to the store.
    pub fn put_registry(&self, registry: &ImageRegistry) -> Result<Vec<String>, StoreError> {
        let mut hashes = Vec::new();
        for index in 1..=registry.len() {
            if let Some(image) = registry.payload(index) {
                hashes.push(self.put(&image)?);
            }
        }
        Ok(hashes)
    }

    /// Reattaches pixel data to a deserialized registry using the recorded
    /// content hashes.
    pub fn hydrate_registry(&self, registry: &mut ImageRegistry) -> Result<(), StoreError> {
        for index in 1..=registry.len() {
            if registry.payload(index).is_none() {
                let meta = registry.meta(index).expect("index in range");
                let image = self.get(&meta.sha256)?;
                registry.attach_pixels(index, image)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ScriptedPolicy;
    use crate::rollout::{run_rollout, RolloutLimits};
    use crate::schema::agentic_registry;
    use crate::test_support::{empty_toolbox, fixture_item, gradient_image};
    use crate::transcript::WorkflowKind;

    fn sample_trajectory(seed: u64) -> Trajectory {
        let policy = ScriptedPolicy::new(
            vec!["<think>done</think><answer>Paris</answer>".to_string()],
            7,
        );
        let toolbox = empty_toolbox();
        run_rollout(
            &fixture_item("i1"),
            &policy,
            &toolbox,
            &agentic_registry(),
            WorkflowKind::Agentic,
            &RolloutLimits::default(),
            seed,
            None,
        )
        .unwrap()
    }

    #[test]
    fn append_and_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = TrajectoryStore::new(dir.path().join("log.jsonl"));
        let a = sample_trajectory(1);
        let b = sample_trajectory(2);
        store.append(&a).unwrap();
        store.append(&b).unwrap();
        let back = store.read_all().unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(serde_json::to_string(&back[0]).unwrap(), serde_json::to_string(&a).unwrap());
        assert_eq!(back[1].seed, 2);
    }

    #[test]
    fn read_missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let store = TrajectoryStore::new(dir.path().join("absent.jsonl"));
        assert!(store.read_all().unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        let err = TrajectoryStore::new(&path).read_all().unwrap_err();
        assert!(matches!(err, StoreError::Malformed { line: 1, .. }));
    }

    #[test]
    fn blob_round_trip_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::new(dir.path()).unwrap();
        let image = gradient_image(8, 6);
        let h1 = store.put(&image).unwrap();
        let h2 = store.put(&image).unwrap();
        assert_eq!(h1, h2);
        assert!(store.contains(&h1));
        let back = store.get(&h1).unwrap();
        assert_eq!(back, image);
    }

    #[test]
    fn missing_blob_errors() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::new(dir.path()).unwrap();
        assert!(matches!(
            store.get("deadbeef"),
            Err(StoreError::MissingBlob { .. })
        ));
    }

    #[test]
    fn registry_hydration_restores_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::new(dir.path()).unwrap();
        let image = gradient_image(5, 4);
        let registry = ImageRegistry::new(image.clone());
        store.put_registry(&registry).unwrap();

        let json = serde_json::to_string(&registry).unwrap();
        let mut back: ImageRegistry = serde_json::from_str(&json).unwrap();
        assert!(back.payload(1).is_none());
        store.hydrate_registry(&mut back).unwrap();
        assert_eq!(back.payload(1).unwrap(), image);
    }
}
