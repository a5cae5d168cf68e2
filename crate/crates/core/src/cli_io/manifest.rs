use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{hex, RunConfig, RUN_SCHEMA_VERSION};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Commands that have written into this directory, oldest first.
    pub commands: Vec<String>,
    pub created_at: String,
    pub updated_at: String,
    pub files: Vec<ManifestEntry>,
}

fn now() -> String {
    chrono::Local::now().format("%Y-%m-%dT%H:%M:%S%z").to_string()
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::read(path, e))?;
    Ok((hex(&Sha256::digest(&bytes)), bytes.len() as u64))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else if path.strip_prefix(root).ok() != Some(Path::new(MANIFEST_FILE)) {
            out.push(path);
        }
    }
    Ok(())
}

/// Every file under `root` except the manifest itself, sorted by path.
pub fn hash_tree(root: &Path) -> Result<Vec<ManifestEntry>> {
    let mut paths = Vec::new();
    walk(root, root, &mut paths)?;
    let mut out = paths
        .iter()
        .map(|p| {
            let (sha256, bytes) = sha256_file(p)?;
            let rel = p.strip_prefix(root).expect("walked under root");
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok(ManifestEntry { path, sha256, bytes })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Rewrites the manifest of `root` after `command`. A manifest from another
/// configuration is replaced rather than extended.
pub fn update_manifest(root: &Path, config: &RunConfig, command: &str) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let config_hash = config.hash();
    let previous: Option<Manifest> = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .filter(|m: &Manifest| m.config_hash == config_hash);
    let stamp = now();
    let (created_at, mut commands) = match previous {
        Some(m) => (m.created_at, m.commands),
        None => (stamp.clone(), Vec::new()),
    };
    commands.push(command.to_string());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        schema_version: RUN_SCHEMA_VERSION,
        config_hash,
        seed: config.seed,
        commands,
        created_at,
        updated_at: stamp,
        files: hash_tree(root)?,
    };
    super::dataset::write_json(&path, &manifest)?;
    Ok(manifest)
}
