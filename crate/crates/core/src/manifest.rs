//! Run manifests: a structured snapshot of the resolved configuration,
//! inputs, and seed of every command, sufficient to re-run it identically.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::util::{atomic_write, hash_input};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub toolkit_version: String,
    /// Subcommand that produced the output directory.
    pub command: String,
    /// Resolved argument vector (without the program name); re-running these
    /// arguments reproduces the outputs bit-exactly, timestamps aside.
    pub argv: Vec<String>,
    pub seed: u64,
    /// sha256 per input path.
    pub inputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Full resolved configuration snapshot.
    pub config: Config,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn begin(command: &str, argv: Vec<String>, seed: u64, config: Config) -> Self {
        Self {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv,
            seed,
            inputs: BTreeMap::new(),
            started_unix: now_unix(),
            finished_unix: 0,
            config,
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), hash_input(path)?);
        Ok(())
    }

    /// Stamp the end time and write `manifest.toml` into the out directory.
    pub fn finish(mut self, out_dir: &Path) -> Result<()> {
        self.finished_unix = now_unix();
        let text = toml::to_string_pretty(&self)
            .map_err(|e| Error::InvalidArgument(format!("manifest serialize: {e}")))?;
        atomic_write(&out_dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.message().to_string()))
    }
}
