//! Output directory bookkeeping: every file written through an [`OutputSet`]
//! is hashed and listed in `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
/// Wall-clock timing lives outside the manifest so reruns stay identical.
pub const TIMING: &str = "timing.txt";

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug)]
pub struct OutputSet {
    root: PathBuf,
    files: Vec<FileEntry>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Internal(anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl OutputSet {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Config(format!("output directory {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (forward slashes) under the root.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.push(FileEntry { path: rel.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.into()))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Takes over the entries of a nested set written under `prefix/`.
    pub fn absorb(&mut self, prefix: &str, nested: OutputSet) {
        for f in nested.files {
            self.files.push(FileEntry { path: format!("{prefix}/{}", f.path), ..f });
        }
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.json` (the given header plus the sorted file list) and
    /// the untracked timing file.
    pub fn finish(mut self, header: serde_json::Value, wall_seconds: f64) -> Result<(), CliError> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut manifest = match header {
            serde_json::Value::Object(m) => m,
            other => {
                let mut m = serde_json::Map::new();
                m.insert("header".into(), other);
                m
            }
        };
        manifest.insert("files".into(), serde_json::to_value(&self.files).map_err(|e| CliError::Internal(e.into()))?);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.into()))?;
        text.push('\n');
        let path = self.root.join(MANIFEST);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        let timing = self.root.join(TIMING);
        fs::write(&timing, format!("wall_seconds {wall_seconds:.3}\n")).map_err(|e| io_err(&timing, e))?;
        Ok(())
    }
}
