//! Checkpoint persistence: named parameter arrays plus configuration,
//! training epoch, and the run seed. Loading validates every array name and
//! length against the configuration and fails on any mismatch.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::GeneratorConfig;
use super::state::{ModelState, Params};
use super::ModelError;

/// A model snapshot bound to the epoch it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: GeneratorConfig,
    epoch: usize,
    seed: u64,
    params: Vec<NamedArray>,
}

fn ck_err(path: &Path, message: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    let params = checkpoint
        .state
        .params
        .named_slices()
        .into_iter()
        .map(|(name, values)| NamedArray {
            name,
            values: values.to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        config: checkpoint.state.config.clone(),
        epoch: checkpoint.epoch,
        seed: checkpoint.seed,
        params,
    };
    let mut body = serde_json::to_string(&file).map_err(|e| ck_err(path, e.to_string()))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| ck_err(path, e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = fs::read_to_string(path).map_err(|e| ck_err(path, e.to_string()))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| ck_err(path, e.to_string()))?;
    file.config.validate()?;
    let mut params = Params::zeros_like(&file.config);
    {
        let mut slices = params.named_slices_mut();
        if slices.len() != file.params.len() {
            return Err(ck_err(
                path,
                format!(
                    "expected {} parameter arrays for this config, file has {}",
                    slices.len(),
                    file.params.len()
                ),
            ));
        }
        for (slot, stored) in slices.iter_mut().zip(&file.params) {
            if slot.0 != stored.name {
                return Err(ck_err(
                    path,
                    format!("parameter order mismatch: expected {}, found {}", slot.0, stored.name),
                ));
            }
            if slot.1.len() != stored.values.len() {
                return Err(ck_err(
                    path,
                    format!(
                        "shape mismatch for {}: config wants {} values, file has {}",
                        stored.name,
                        slot.1.len(),
                        stored.values.len()
                    ),
                ));
            }
            slot.1.copy_from_slice(&stored.values);
        }
    }
    if !params.all_finite() {
        return Err(ck_err(path, "non-finite parameter value"));
    }
    Ok(Checkpoint {
        state: ModelState {
            config: file.config,
            params,
        },
        epoch: file.epoch,
        seed: file.seed,
    })
}
