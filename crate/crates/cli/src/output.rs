//! Experiment directory: artifacts plus `manifest.json`, which records for
//! each command the config hash and every file it wrote with its digest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub commands: BTreeMap<String, CommandEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    pub config_hash: String,
    /// Relative path → SHA-256 of the contents.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

pub struct OutDir {
    root: PathBuf,
    experiment: String,
    command: String,
    entry: CommandEntry,
}

impl OutDir {
    pub fn create(root: &Path, experiment: &str, command: &str, config_hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            experiment: experiment.into(),
            command: command.into(),
            entry: CommandEntry { config_hash: config_hash.into(), artifacts: BTreeMap::new() },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.entry.artifacts.insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(path)
    }

    /// Renders with `f` into memory, then writes.
    pub fn csv(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> splab::Result<()>) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    /// Merges this command's entry into the manifest.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let mut m = Manifest::read(&self.root)?.unwrap_or_default();
        m.experiment = self.experiment;
        m.commands.insert(self.command, self.entry);
        let path = self.root.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
