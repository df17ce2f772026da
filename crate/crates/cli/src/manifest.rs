//! Run manifests: the resolved configuration, its hash, and digests of
//! every input and output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
struct Versions {
    structembed: &'static str,
    checkpoint_format: &'static str,
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    command: &'a str,
    seed: u64,
    config: &'a BTreeMap<String, String>,
    config_hash: String,
    versions: Versions,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

pub struct Manifest {
    command: String,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(path.into());
        self
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(path.into());
        self
    }

    /// Hash of the command name and the resolved `section.key = value`
    /// pairs in key order.
    pub fn config_hash(command: &str, config: &BTreeMap<String, String>) -> String {
        let mut text = format!("command={command}\n");
        for (k, v) in config {
            text.push_str(&format!("{k}={v}\n"));
        }
        sha256_hex(text.as_bytes())
    }

    /// Writes `<dir>/<command>.manifest.json` and returns its path.
    pub fn write(&self, dir: &Path, config: &BTreeMap<String, String>) -> Result<PathBuf> {
        let digests = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> { paths.iter().map(|p| Ok((p.display().to_string(), file_digest(p)?))).collect() };
        let doc = ManifestDoc {
            command: &self.command,
            seed: self.seed,
            config,
            config_hash: Self::config_hash(&self.command, config),
            versions: Versions {
                structembed: env!("CARGO_PKG_VERSION"),
                checkpoint_format: "SSRL1",
            },
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
        };
        let path = dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
