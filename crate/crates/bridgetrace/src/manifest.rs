// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Run manifests: what a command read, wrote, and was told.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::store::{self, StoreError};

pub const TOOL_VERSION: &str = concat!("bridgetrace ", env!("CARGO_PKG_VERSION"));

/// Written next to every output set. Apart from the two timestamps, equal
/// inputs, flags and seeds give an identical manifest.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub spec_version: String,
    pub tool_version: String,
    pub parameters: BTreeMap<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    /// Input path as given, to sha256 of its bytes.
    pub input_digests: BTreeMap<String, String>,
    /// Output path relative to the dataset root, to sha256.
    pub output_digests: BTreeMap<String, String>,
    pub retries: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failed_addresses: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncated_addresses: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now_rfc3339() -> String {
    OffsetDateTime::now_utc()
        .format(&Rfc3339)
        .unwrap_or_else(|_| "unknown".to_string())
}

impl RunManifest {
    pub fn begin(command: &str, config_path: Option<&Path>, spec_version: &str) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            spec_version: spec_version.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            started_at: now_rfc3339(),
            ..Self::default()
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.parameters.insert(
            key.to_string(),
            serde_json::to_value(value).expect("parameter serializes"),
        );
        self
    }

    /// Digests an input file.
    pub fn input(&mut self, path: &Path) -> Result<(), StoreError> {
        let digest = store::file_digest(path)?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, root: &Path, path: &Path, digest: String) {
        let key = path.strip_prefix(root).unwrap_or(path);
        self.output_digests.insert(key.display().to_string(), digest);
    }

    /// Copy with both timestamps cleared, for comparing runs.
    pub fn without_timestamps(&self) -> Self {
        Self {
            started_at: String::new(),
            finished_at: String::new(),
            ..self.clone()
        }
    }

    /// Stamps the finish time and writes the manifest atomically.
    pub fn finish(mut self, path: &Path) -> Result<Self, StoreError> {
        self.finished_at = now_rfc3339();
        let mut bytes = serde_json::to_vec_pretty(&self).expect("manifest serializes");
        bytes.push(b'\n');
        store::write_bytes_atomic(path, &bytes)?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = std::fs::read(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Line {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })
    }
}
