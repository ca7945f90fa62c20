//! Model checkpoints: every tensor with its shape, plus the optimizer state
//! so training can resume.

use std::path::Path;

use anchorplan_core::denoiser::{ModelConfig, TrainConfig, TrainState, TrainableDenoiser};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::suite::{read_json, write_json};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tensors: Vec<Tensor>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(model: &TrainableDenoiser, train: TrainConfig, state: TrainState) -> Self {
        let tensors = model
            .tensors()
            .into_iter()
            .map(|(info, values)| Tensor { name: info.name, shape: info.shape, values: values.to_vec() })
            .collect();
        Self { schema_version: SCHEMA_VERSION, model: *model.config(), train, tensors, state }
    }

    /// Rebuilds the model, checking every tensor name and shape against the
    /// layout implied by the stored model config.
    pub fn to_model(&self) -> Result<TrainableDenoiser> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Validation(format!("checkpoint schema version {}", self.schema_version)));
        }
        let expected = TrainableDenoiser::new(self.model, 0)?.tensor_infos();
        if expected.len() != self.tensors.len() {
            return Err(HarnessError::Validation(format!(
                "checkpoint has {} tensors, model needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        let mut params = Vec::new();
        for (want, got) in expected.iter().zip(&self.tensors) {
            let size: usize = got.shape.iter().product();
            if want.name != got.name || want.shape != got.shape || size != got.values.len() {
                return Err(HarnessError::Validation(format!(
                    "tensor {} {:?} ({} values) does not match {} {:?}",
                    got.name,
                    got.shape,
                    got.values.len(),
                    want.name,
                    want.shape
                )));
            }
            params.extend_from_slice(&got.values);
        }
        if self.state.rms.len() != params.len() {
            return Err(HarnessError::Validation("optimizer state does not match the model".into()));
        }
        Ok(TrainableDenoiser::from_params(self.model, params)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}
