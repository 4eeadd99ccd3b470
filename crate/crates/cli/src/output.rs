//! Output directory: atomic artifact writes, digests and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Value;

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, contents)?;
        self.artifacts.retain(|a| a.file != name);
        self.artifacts.push(Artifact { file: name.to_string(), sha256: hex::encode(Sha256::digest(contents)), bytes: contents.len() });
        Ok(path)
    }

    /// Lists an artifact written elsewhere under `name`.
    pub fn record(&mut self, name: &str, artifact: &Artifact) {
        self.artifacts.retain(|a| a.file != name);
        self.artifacts.push(Artifact { file: name.to_string(), ..artifact.clone() });
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` (not itself listed as an artifact).
    pub fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        write_atomic(&self.root.join("manifest.json"), text.as_bytes())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub threads: usize,
    pub config: BTreeMap<String, Value>,
    pub wall_time_seconds: f64,
    pub checks: Vec<crate::commands::Check>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&dir.path().join("run")).unwrap();
        out.write("a.csv", b"x\n1\n").unwrap();
        out.write("a.csv", b"x\n2\n").unwrap();
        assert_eq!(out.artifacts().len(), 1);
        assert_eq!(fs::read_to_string(dir.path().join("run/a.csv")).unwrap(), "x\n2\n");
        assert_eq!(out.artifacts()[0].sha256, hex::encode(Sha256::digest(b"x\n2\n")));
        let leftovers: Vec<_> = fs::read_dir(out.path()).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().contains(".tmp")).collect();
        assert!(leftovers.is_empty());
    }
}
