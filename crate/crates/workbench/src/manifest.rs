//! Run manifests: one JSON file per stage invocation echoing the resolved
//! configuration, the seed, content digests of inputs and outputs, and
//! item counts.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use groundkit_core::records::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Number of files folded into the digest when `path` is a directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<u64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> io::Result<(String, u64)> {
    let bytes = fs::read(path)?;
    Ok((hex(&Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Digest of a file, or of a directory's regular files (sorted by name,
/// hashing each name with its content digest).
pub fn digest(path: &Path) -> io::Result<FileDigest> {
    let shown = path.display().to_string();
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        names.retain(|p| p.is_file());
        names.sort();
        let mut hasher = Sha256::new();
        let mut total = 0;
        for p in &names {
            let (sha, bytes) = sha256_file(p)?;
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(sha.as_bytes());
            hasher.update(b"\n");
            total += bytes;
        }
        Ok(FileDigest {
            path: shown,
            sha256: hex(&hasher.finalize()),
            bytes: total,
            files: Some(names.len() as u64),
        })
    } else {
        let (sha256, bytes) = sha256_file(path)?;
        Ok(FileDigest {
            path: shown,
            sha256,
            bytes,
            files: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub stage: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// The stage's resolved options, as parsed.
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub counts: BTreeMap<String, u64>,
    /// Stage-specific results such as the re-sampling cap.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

impl RunManifest {
    pub fn new(stage: &str, seed: Option<u64>, config: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage: stage.to_string(),
            status: RunStatus::Ok,
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            details: BTreeMap::new(),
            error: None,
        }
    }

    pub fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n as u64);
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.details.insert(key.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> io::Result<()> {
        self.outputs.push(digest(path)?);
        Ok(())
    }

    pub fn fail(&mut self, kind: &str, message: String) {
        self.status = RunStatus::Failed;
        self.error = Some(ErrorReport {
            kind: kind.to_string(),
            message,
        });
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut body = serde_json::to_vec_pretty(self)?;
        body.push(b'\n');
        fs::write(path, body)
    }
}
