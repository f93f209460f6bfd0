use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epoch: usize,
    pub loss_mode: String,
    /// Free-form stage tag, e.g. `encoder` or `nr_head`.
    pub stage: String,
    pub val_criterion: Option<f64>,
}

/// Versioned JSON container for model weights and training metadata.
///
/// Floats are written with shortest round-trip formatting and parsed
/// exactly, so save followed by load reproduces every weight bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelParams,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(model: ModelParams, meta: TrainingMeta) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model,
            meta,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.model.config.validate()?;
        ck.model.zero_grad();
        let reference = ModelParams::init(ck.model.config.clone(), 0)?;
        let shapes_match = reference.params.len() == ck.model.params.len()
            && reference
                .params
                .iter()
                .zip(&ck.model.params)
                .all(|(a, b)| a.value.shape() == b.value.shape());
        if !shapes_match {
            return Err(Error::Serde(
                "parameter shapes do not match the stored encoder config".into(),
            ));
        }
        if ck.model.params.iter().any(|p| !p.value.is_finite()) {
            return Err(Error::NonFinite("checkpoint contains non-finite weights".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
