//! Everything needed to re-run an adaptation, in one serializable value.
//! The optional `--config` file has this shape, and `run.json` embeds it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ama::AmaConfig;
use crate::canonical;
use crate::embedding::EmbeddingConfig;
use crate::llm::LlmConfig;
use crate::memory::StoreConfig;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: String,
    pub ama: AmaConfig,
    pub store: StoreConfig,
    pub embedding: EmbeddingConfig,
    pub llm: LlmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: SCHEMA_VERSION.into(),
            ama: AmaConfig::default(),
            store: StoreConfig::default(),
            embedding: EmbeddingConfig::default(),
            llm: LlmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // A whole run.json is accepted too; its config sits under config_snapshot.
        let value = value.get("config_snapshot").cloned().unwrap_or(value);
        serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn digest(&self) -> String {
        sha256_hex(canonical::to_line(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
