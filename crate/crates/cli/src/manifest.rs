use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one command run, written as `manifest.json` in its output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Digest of the arguments and every input file's digest.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub version: String,
    /// Wall-clock seconds per stage; excluded from the reproducibility contract.
    pub timings: BTreeMap<String, f64>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], seed: Option<u64>) -> Self {
        RunManifest {
            command: command.into(),
            args: args.to_vec(),
            config_hash: String::new(),
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            timings: BTreeMap::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Records the time since the previous mark under `stage`.
    pub fn mark(&mut self, stage: &str) {
        let now = Instant::now();
        if let Some(t) = self.started.replace(now) {
            self.timings.insert(stage.into(), (now - t).as_secs_f64());
        }
    }

    /// Hashes outputs and writes the manifest into `dir`.
    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<()> {
        for p in outputs {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            self.outputs.insert(name, sha256_file(p)?);
        }
        let mut h = Sha256::new();
        for a in &self.args {
            h.update(a.as_bytes());
            h.update([0]);
        }
        for (k, v) in &self.inputs {
            h.update(k.as_bytes());
            h.update(v.as_bytes());
        }
        self.config_hash = hex::encode(h.finalize());
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
