use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
    pub command: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Every file the pipeline wrote into a work directory, keyed by path
/// relative to it. Timestamps live only here, never in artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub commands: Vec<CommandRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyProblem {
    Missing(PathBuf),
    Changed(PathBuf),
}

impl RunManifest {
    pub fn load_or_default(workdir: &Path) -> Result<Self> {
        let path = workdir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self {
                tool_version: env!("CARGO_PKG_VERSION").into(),
                ..Default::default()
            });
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path,
            message: e.to_string(),
        })
    }

    pub fn save(&mut self, workdir: &Path) -> Result<()> {
        self.tool_version = env!("CARGO_PKG_VERSION").into();
        let path = workdir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    /// Listed files that are gone or whose content no longer matches.
    pub fn verify(&self, workdir: &Path) -> Result<Vec<VerifyProblem>> {
        let mut problems = Vec::new();
        for (rel, entry) in &self.artifacts {
            let path = workdir.join(rel);
            match std::fs::read(&path) {
                Ok(bytes) if sha256_hex(&bytes) == entry.sha256 => {}
                Ok(_) => problems.push(VerifyProblem::Changed(path)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => problems.push(VerifyProblem::Missing(path)),
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        Ok(problems)
    }
}
