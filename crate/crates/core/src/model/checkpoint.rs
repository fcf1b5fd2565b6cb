//! JSON checkpoints: the model configuration plus every tensor by name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PhaModel;
use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};
use crate::types::ModelConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Tensors in registration order.
    pub tensors: Vec<(String, Tensor)>,
    /// Free-form run information (training config, seed, epochs).
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub meta: Value,
}

impl Checkpoint {
    pub fn from_model(model: &PhaModel, meta: Value) -> Self {
        Self {
            config: model.config().clone(),
            tensors: model
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            meta,
        }
    }

    pub fn into_model(self) -> Result<PhaModel> {
        self.config
            .validate()
            .map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
        let mut params = ParamSet::default();
        for (name, t) in self.tensors {
            if params.find(&name).is_some() {
                return Err(Error::CheckpointMismatch(format!(
                    "duplicate tensor `{name}`"
                )));
            }
            params.add(name, t);
        }
        PhaModel::from_parts(self.config, params)
    }
}

pub fn save_checkpoint(model: &PhaModel, meta: Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ck = Checkpoint::from_model(model, meta);
    let text = serde_json::to_string(&ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and checks it against the architecture its config
/// describes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PhaModel, Value)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::CheckpointMismatch(format!("{}: {e}", path.display())))?;
    let meta = ck.meta.clone();
    Ok((ck.into_model()?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Variant;

    fn cfg() -> ModelConfig {
        ModelConfig {
            hidden_size: 4,
            horizon: 3,
            obs_horizon: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = PhaModel::new(cfg(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_checkpoint(&m, serde_json::json!({"seed": 11}), &p).unwrap();
        let (back, meta) = load_checkpoint(&p).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(meta["seed"], 11);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let m = PhaModel::new(cfg(), 1).unwrap();
        let mut ck = Checkpoint::from_model(&m, Value::Null);
        ck.tensors[0].1 = Tensor::zeros(1, 1);
        assert!(matches!(ck.into_model(), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let m = PhaModel::new(cfg(), 1).unwrap();
        let mut ck = Checkpoint::from_model(&m, Value::Null);
        ck.config = ck.config.with_variant(Variant::LinearDecoder);
        assert!(ck.into_model().is_err());
        let mut ck = Checkpoint::from_model(&m, Value::Null);
        ck.tensors.pop();
        assert!(ck.into_model().is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_checkpoint("/nonexistent/m.json"),
            Err(Error::Io { .. })
        ));
    }
}
