use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::report::json_string;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub passed: bool,
}

/// Collects everything a run writes. Files land in the output directory as
/// they are produced; the manifest is written last by [`Artifacts::finish`].
pub struct Artifacts {
    dir: PathBuf,
    outputs: Vec<FileEntry>,
    checks: Vec<Check>,
    notes: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.outputs.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn failed_checks(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect()
    }

    pub fn finish(mut self, subcommand: &str, seed: Option<u64>, config: Value, inputs: &[PathBuf]) -> Result<Manifest> {
        let config_text = serde_json::to_string(&config)?;
        let mut input_entries = Vec::new();
        for p in inputs {
            let bytes = if p.is_dir() { Vec::new() } else { fs::read(p)? };
            input_entries.push(FileEntry {
                path: p.display().to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            tool: "policylab",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            config,
            inputs: input_entries,
            outputs: self.outputs,
            passed: self.checks.iter().all(|c| c.passed),
            checks: self.checks,
            notes: self.notes,
        };
        fs::write(self.dir.join("manifest.json"), json_string(&manifest)?)?;
        Ok(manifest)
    }
}
