//! `run.json`: what a run did, with enough detail to repeat it.

use std::collections::BTreeMap;
use std::path::Path;

use hierflow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub argv: Vec<String>,
    /// Effective config after merging flags, file and defaults.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub versions: BTreeMap<&'static str, String>,
    /// Content hashes of inputs (model, checkpoint, datasets).
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, by file name.
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

impl RunInfo {
    pub fn new(command: &str, argv: &[String], config: &impl Serialize, seed: Option<u64>) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("hierflow", hierflow::VERSION.to_string());
        versions.insert("hierflow_cli", env!("CARGO_PKG_VERSION").to_string());
        versions.insert("checkpoint_format", hierflow::training::FORMAT_VERSION.to_string());
        RunInfo {
            command: command.into(),
            argv: argv.to_vec(),
            config: serde_json::to_value(config).unwrap_or_default(),
            seed,
            threads: None,
            deterministic: false,
            versions,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, name: impl Into<String>, hash: impl Into<String>) {
        self.inputs.insert(name.into(), hash.into());
    }

    /// Hashes every regular file under `dir` except `run.json` itself.
    pub fn record_outputs(&mut self, dir: &Path) -> Result<()> {
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.file_name().is_some_and(|n| n != "run.json") {
                    let rel = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
                    self.outputs.insert(rel, file_hash(&path)?);
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}
