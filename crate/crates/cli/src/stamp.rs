//! Reproducibility stamps: the resolved config, the seeds in force and the
//! hash of every artifact a command wrote. Stamps carry no clock values.

use std::collections::BTreeMap;
use std::path::Path;

use mge_core::store::{content_hash, write_atomic};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub dataset: u64,
    pub train: u64,
    pub generator: u64,
    pub evolution: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub command: String,
    pub version: String,
    pub seeds: Seeds,
    pub hash_algorithm: String,
    /// Output-relative path to content hash.
    pub artifacts: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

impl Stamp {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Stamp {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: Seeds {
                dataset: cfg.dataset.seed,
                train: cfg.train.seed,
                generator: cfg.generator.config.seed,
                evolution: cfg.evolution.seed,
            },
            hash_algorithm: mge_core::store::HASH_ALGORITHM.to_string(),
            artifacts: BTreeMap::new(),
            config: serde_json::to_value(cfg).expect("config serializes"),
        }
    }

    /// Hashes a file already written under `out`.
    pub fn record(&mut self, out: &Path, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let rel = path.strip_prefix(out).unwrap_or(path);
        self.artifacts.insert(
            rel.to_string_lossy().replace('\\', "/"),
            content_hash(&bytes),
        );
        Ok(())
    }

    pub fn file_name(command: &str) -> String {
        format!("stamp_{command}.json")
    }

    pub fn write(&self, out: &Path) -> CliResult<std::path::PathBuf> {
        let path = out.join(Self::file_name(&self.command));
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
