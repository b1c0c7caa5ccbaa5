//! Stage manifest: counts, seeds, backend identifiers, and checksums for
//! every produced file. Checksums are verified whenever a later stage loads
//! an upstream file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{file_checksum, write_atomic, StoreError};

/// One stage's record in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub seed: u64,
    pub backends: BTreeMap<String, String>,
}

/// The run manifest, one entry per executed stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, StoreError> {
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let bytes = std::fs::read(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::BadRecord {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let mut body = serde_json::to_string_pretty(self).expect("manifest serializes");
        body.push('\n');
        write_atomic(path, body.as_bytes())
    }

    /// Checksum recorded for `file_name` by any previous stage's outputs.
    pub fn recorded_output(&self, file_name: &str) -> Option<&str> {
        self.stages
            .values()
            .find_map(|s| s.outputs.get(file_name).map(String::as_str))
    }

    /// Verify a file against the checksum recorded for it, when one exists.
    pub fn verify_input(&self, path: &Path) -> Result<String, StoreError> {
        let actual = file_checksum(path)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some(expected) = self.recorded_output(&name) {
            if expected != actual {
                return Err(StoreError::ChecksumMismatch {
                    path: path.to_path_buf(),
                    expected: expected.to_string(),
                    actual,
                });
            }
        }
        Ok(actual)
    }
}
