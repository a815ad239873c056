//! Run-directory manifest: every artifact the harness writes is recorded
//! with its SHA-256 digest, and reads go through the digest check.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    /// Digest of everything that determined the artifact's contents. A
    /// step whose inputs digest is unchanged and whose file still matches
    /// is skipped on rerun.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub experiment_id: String,
    /// Digest of the canonical form of the configuration.
    pub config_digest: String,
    /// Kept sorted by path.
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn new(experiment_id: &str, config_digest: &str) -> Self {
        Manifest {
            experiment_id: experiment_id.to_string(),
            config_digest: config_digest.to_string(),
            artifacts: Vec::new(),
        }
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path_in(dir);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path,
            reason: e.message().to_string(),
        })
    }

    /// The manifest in `dir`, or `None` when there is none yet.
    pub fn load_if_present(dir: &Path) -> Result<Option<Self>> {
        if Self::path_in(dir).exists() {
            Self::load(dir).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("manifest is always representable as TOML");
        write_file(&Self::path_in(dir), text.as_bytes())
    }

    pub fn get(&self, rel: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == rel)
    }

    /// Writes `bytes` to `dir/rel` and records its digest.
    pub fn record(
        &mut self,
        dir: &Path,
        rel: &str,
        bytes: &[u8],
        inputs: Option<String>,
    ) -> Result<()> {
        write_file(&dir.join(rel), bytes)?;
        let entry = Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            inputs,
        };
        match self
            .artifacts
            .binary_search_by(|a| a.path.as_str().cmp(rel))
        {
            Ok(i) => self.artifacts[i] = entry,
            Err(i) => self.artifacts.insert(i, entry),
        }
        Ok(())
    }

    /// Contents of a recorded artifact after checking its digest.
    pub fn read_verified(&self, dir: &Path, rel: &str) -> Result<Vec<u8>> {
        let path = dir.join(rel);
        let entry = self.get(rel).ok_or_else(|| {
            Error::Data(format!(
                "{} is not recorded in the manifest",
                path.display()
            ))
        })?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if found != entry.sha256 {
            return Err(Error::Digest {
                path,
                expected: entry.sha256.clone(),
                found,
            });
        }
        Ok(bytes)
    }

    /// Whether `rel` was produced from `inputs` and is still intact. A
    /// recorded file whose contents changed is an error, not a miss.
    pub fn is_current(&self, dir: &Path, rel: &str, inputs: &str) -> Result<bool> {
        match self.get(rel) {
            Some(a) if a.inputs.as_deref() == Some(inputs) => {
                self.read_verified(dir, rel).map(|_| true)
            }
            _ => Ok(false),
        }
    }

    pub fn verify_all(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            self.read_verified(dir, &a.path)?;
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
