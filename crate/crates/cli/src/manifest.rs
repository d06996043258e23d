//! Machine-readable record of one invocation: options, input and output
//! checksums, and the outcome.

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub category: String,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub subcommand: String,
    pub status: String,
    pub options: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Output paths are relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub error: Option<ErrorRecord>,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> std::io::Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    Ok((digest_bytes(&bytes), bytes.len() as u64))
}

pub fn manifest_name(subcommand: &str) -> String {
    format!("{subcommand}.manifest.json")
}

/// Collects inputs and writes artifacts for one run.
#[derive(Debug)]
pub struct Run {
    pub out_dir: PathBuf,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Run {
    pub fn new(out_dir: PathBuf) -> Self {
        Self { out_dir, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<PathBuf> {
        let canon = path.canonicalize().with_context(|| format!("input {}", path.display()))?;
        if canon.is_file() && !self.inputs.iter().any(|d| Path::new(&d.path) == canon) {
            let (sha256, bytes) = digest_file(&canon)?;
            self.inputs.push(FileDigest { path: canon.display().to_string(), sha256, bytes });
        }
        Ok(canon)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let bytes = bytes.as_ref();
        std::fs::write(self.out_dir.join(name), bytes)?;
        self.outputs.retain(|d| d.path != name);
        self.outputs.push(FileDigest { path: name.to_string(), sha256: digest_bytes(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }
}
