//! Run-directory manifest: a hash listing of every artifact plus the
//! pipeline hash shared across methods.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex_string, RunConfig};
use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    /// Hash over the method-independent pipeline settings.
    pub pipeline_hash: String,
    pub files: Vec<ManifestEntry>,
}

fn hash_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok((hex_string(&hasher.finalize()), bytes.len() as u64))
}

fn collect(dir: &Path, root: &Path, files: &mut Vec<ManifestEntry>) -> Result<(), CliError> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect(&path, root, files)?;
        } else if path.file_name().map(|n| n != "manifest.json").unwrap_or(true) {
            let (sha256, bytes) = hash_file(&path)?;
            files.push(ManifestEntry {
                path: path.strip_prefix(root).unwrap().to_string_lossy().into_owned(),
                sha256,
                bytes,
            });
        }
    }
    Ok(())
}

/// Hash every artifact under `run_dir` (excluding the manifest itself) and
/// write `manifest.json`.
pub fn write_manifest(run_dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect(run_dir, run_dir, &mut files)?;
    let manifest = Manifest {
        pipeline_hash: config.pipeline_hash(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
    fs::write(run_dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn read_manifest(run_dir: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(run_dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("manifest: {e}")))
}
