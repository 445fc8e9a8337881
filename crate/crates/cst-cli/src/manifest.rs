//! Run manifests: one JSON document per command invocation, written
//! beside the outputs, recording the configuration snapshot and a
//! content hash of every artifact.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use cst_core::error::Result;

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputRecord>,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(path.into());
        self
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(path.into());
        self
    }

    /// Hash the recorded outputs and write `<command>.manifest.json` into
    /// `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for path in &self.outputs {
            let bytes = std::fs::read(path)?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            outputs.push(OutputRecord {
                path: path.clone(),
                sha256: format!("{:x}", hasher.finalize()),
                bytes: bytes.len() as u64,
            });
        }
        let manifest = Manifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            outputs,
            seed: self.seed,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_vec_pretty(&manifest)?;
        cst_core::io::atomic_write(&path, &text)?;
        Ok(path)
    }
}
