//! Content hashing and run records: every command writes a `run.json`
//! sidecar naming its inputs (by content hash), its exact config, and wall
//! time. The sidecar is provenance, not part of the reproducible artifact
//! set.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Hash of a directory tree: file-relative paths and contents, in sorted
/// order. `run.json` sidecars are excluded so re-runs compare equal.
pub fn hash_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in &files {
        if rel.file_name().map(|n| n == "run.json").unwrap_or(false) {
            continue;
        }
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        let bytes = std::fs::read(dir.join(rel)).map_err(|e| Error::io(dir.join(rel), e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex_string(&h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    Ok(())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    /// Input artifact name -> content hash.
    pub inputs: Vec<(String, String)>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("run.json"), text).map_err(|e| Error::io(dir.join("run.json"), e))
    }
}
