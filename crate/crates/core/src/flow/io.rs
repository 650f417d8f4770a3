//! Model file: one pretty-printed JSON document.
//!
//! Floats are written in shortest round-trip decimal form and parsed back
//! exactly, so a saved model reloads bit-identically. `model_hash` is the
//! SHA-256 of the compact JSON encoding of `model` and is checked on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowModel, TrainConfig};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "ccnf-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model_hash: String,
    /// Hash of the configuration that produced the model, if any.
    pub config_hash: Option<String>,
    pub train_config: Option<TrainConfig>,
    /// Free-form provenance echoed by the caller (e.g. the effective run config).
    #[serde(default)]
    pub provenance: serde_json::Value,
    pub model: FlowModel,
}

impl ModelFile {
    pub fn new(model: FlowModel, train_config: Option<TrainConfig>, config_hash: Option<String>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model_hash: model.hash(),
            config_hash,
            train_config,
            provenance: serde_json::Value::Null,
            model,
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serialises");
        s.push('\n');
        s
    }

    /// Parses, validates every shape invariant, and verifies the hash.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        file.model
            .validate_and_rebuild()
            .map_err(|e| Error::Format(format!("model file: {e}")))?;
        let actual = file.model.hash();
        if actual != file.model_hash {
            return Err(Error::HashMismatch {
                expected: file.model_hash,
                found: actual,
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}
