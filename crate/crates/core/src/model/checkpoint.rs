use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputSpec, Model, ModelConfig};
use crate::autodiff::Tensor;
use crate::data::DatasetSchema;
use crate::nn::ModelError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Everything needed to rebuild a trained model and check that it is applied
/// to the data layout it was trained on. Stored as JSON; floats round-trip
/// exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub input: InputSpec,
    /// Layout fingerprint of the training data.
    pub fingerprint: String,
    pub params: Vec<NamedTensor>,
    /// Encoders fitted on the training split, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<DatasetSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, fingerprint: impl Into<String>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            input: model.input.clone(),
            fingerprint: fingerprint.into(),
            params: model
                .params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    tensor: t.clone(),
                })
                .collect(),
            schema: None,
            split_seed: None,
        }
    }

    pub fn with_schema(mut self, schema: DatasetSchema, split_seed: u64) -> Self {
        self.schema = Some(schema);
        self.split_seed = Some(split_seed);
        self
    }

    /// Rebuilds the model and loads the stored parameters, checking names
    /// and shapes against the freshly built architecture.
    pub fn to_model(&self) -> Result<Model, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = Model::build(&self.config, &self.input, 0)?;
        if model.params.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                self.params.len()
            )));
        }
        for (expected, stored) in model.params.names().iter().zip(&self.params) {
            if *expected != stored.name {
                return Err(ModelError::Checkpoint(format!(
                    "expected parameter `{expected}`, found `{}`",
                    stored.name
                )));
            }
        }
        model
            .load_params(self.params.iter().map(|p| p.tensor.clone()).collect())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
