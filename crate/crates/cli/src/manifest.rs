//! Per-invocation run manifest: what was run, with which configuration and
//! seeds, and which files it produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    /// Decimal strings: derived seeds exceed the TOML integer range.
    pub seeds: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub complete: bool,
    pub artifacts: Vec<Artifact>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_hash,
            seeds: BTreeMap::new(),
            started_unix: now(),
            finished_unix: 0,
            complete: false,
            artifacts: Vec::new(),
        }
    }

    pub fn seed(&mut self, label: &str, value: u64) {
        self.seeds.insert(label.to_string(), value.to_string());
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        self.artifacts.push(Artifact {
            path: path.display().to_string(),
            sha256: kaneq::io::sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn artifacts<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
        paths.into_iter().try_for_each(|p| self.artifact(p))
    }

    pub fn finish(mut self, path: &Path, complete: bool) -> Result<()> {
        self.finished_unix = now();
        self.complete = complete;
        std::fs::write(path, toml::to_string(&self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
