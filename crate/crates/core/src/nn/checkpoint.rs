use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Model, ModelConfig, NormStats, Params};
use super::NnError;

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model. `content_hash` is the SHA-256 of the JSON encoding of
/// `(config, norm, params)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub norm: NormStats,
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    pub content_hash: String,
}

fn content_hash(config: &ModelConfig, norm: &NormStats, params: &Params) -> Result<String, NnError> {
    let body = serde_json::to_vec(&(config, norm, params)).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let digest = Sha256::digest(&body);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Checkpoint {
    pub fn from_model(model: &Model, epoch: Option<usize>) -> Result<Self, NnError> {
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            norm: model.norm.clone(),
            params: model.params.clone(),
            epoch,
            content_hash: content_hash(&model.config, &model.norm, &model.params)?,
        })
    }

    pub fn into_model(self) -> Result<Model, NnError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let expected = content_hash(&self.config, &self.norm, &self.params)?;
        if expected != self.content_hash {
            return Err(NnError::Checkpoint("content hash mismatch".into()));
        }
        Model::from_parts(self.config, self.norm, self.params)
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))
    }
}

pub fn save_checkpoint(model: &Model, epoch: Option<usize>, path: &Path) -> Result<(), NnError> {
    let text = Checkpoint::from_model(model, epoch)?.to_json()?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, NnError> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)?.into_model()
}
