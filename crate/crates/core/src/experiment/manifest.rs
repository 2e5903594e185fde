use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub command: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Index of everything an experiment wrote. Artifacts are keyed by their
/// path relative to the output directory, so each file appears once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
    /// Wall-clock seconds per step, e.g. `fit/caftt/seed1`.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn new(config_hash: &str) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    /// The manifest under `out`, or a fresh one when absent or written for
    /// another config.
    pub fn open(out: &Path, config_hash: &str) -> Result<Self> {
        let path = out.join(Self::FILE);
        if !path.exists() {
            return Ok(Self::new(config_hash));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.config_hash != config_hash {
            log::warn!("config changed since {} was written; starting a new manifest", path.display());
            return Ok(Self::new(config_hash));
        }
        Ok(m)
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let path = out.join(Self::FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::file(&path, e))
    }

    /// Hashes the file at `out/rel` and records it.
    pub fn record(&mut self, out: &Path, rel: &str, command: &str) -> Result<()> {
        let path = out.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::file(&path, e))?;
        self.artifacts.insert(
            rel.to_string(),
            ArtifactRecord {
                command: command.to_string(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn timing(&self, key: &str) -> Option<f64> {
        self.timings.get(key).copied()
    }
}
