//! Run manifests: every command that writes an artifact records what
//! produced it.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand name plus its arguments, as invoked.
    pub command: Vec<String>,
    pub created_at: String,
    /// Hash of the effective configuration.
    pub config_sha256: String,
    /// Content hashes of the versioned prompt assets in effect.
    pub prompt_assets: Vec<(String, String)>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(config_sha256: String, outputs: Vec<PathBuf>) -> Self {
        Self {
            command: std::env::args().collect(),
            created_at: chrono::Utc::now().to_rfc3339(),
            config_sha256,
            prompt_assets: toolrl_core::prompts::asset_hashes()
                .into_iter()
                .map(|(name, hash)| (name.to_string(), hash))
                .collect(),
            outputs,
        }
    }

    /// Writes the manifest next to the primary output as
    /// `<output>.manifest.json`.
    pub fn write_beside(&self, output: &Path) -> std::io::Result<PathBuf> {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = output.with_file_name(name);
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_and_lists_assets() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report.json");
        let manifest = RunManifest::new("abc".to_string(), vec![out.clone()]);
        assert!(!manifest.prompt_assets.is_empty());
        let path = manifest.write_beside(&out).unwrap();
        let back: RunManifest =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(back.config_sha256, "abc");
        assert_eq!(back.prompt_assets, manifest.prompt_assets);
    }
}
