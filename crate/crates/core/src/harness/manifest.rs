//! Run persistence: the manifest describing a run (command, config
//! snapshot, seed, input content hashes, outputs) and the append-only
//! results.jsonl metrics log.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::harness::metrics::MetricsRecord;

/// SHA-256 hex digest of raw bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Everything needed to reproduce a run: re-running the same command with
/// this config and seed yields identical metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            config,
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix: now_unix(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.input_hashes
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Append metric records to `<out>/results.jsonl`, one JSON object per
/// line. Single writer: callers funnel all records through one call site.
pub fn append_results(out_dir: &Path, records: &[MetricsRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("results.jsonl");
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)?;
    for record in records {
        let line = serde_json::to_string(record)?;
        writeln!(file, "{line}")?;
    }
    Ok(path)
}

pub fn read_results(out_dir: &Path) -> Result<Vec<MetricsRecord>> {
    let path = out_dir.join("results.jsonl");
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str::<MetricsRecord>(l)?))
        .collect()
}
