use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::SafeTensors;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

const CONFIG_KEY: &str = "model_config";
const MANIFEST_KEY: &str = "manifest";

/// A loaded model plus the run manifest stored next to its weights.
pub struct Checkpoint {
    pub model: Model,
    pub manifest: serde_json::Value,
}

/// Writes all parameters as safetensors, with the model config and
/// `manifest` as JSON metadata.
pub fn save_checkpoint(model: &Model, manifest: &serde_json::Value, path: &Path) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert(CONFIG_KEY.to_string(), serde_json::to_string(model.config())?);
    meta.insert(MANIFEST_KEY.to_string(), serde_json::to_string(manifest)?);
    let tensors: Vec<(String, Tensor)> = model
        .params()
        .named_tensors()
        .map(|(name, var)| (name.clone(), var.as_tensor().clone()))
        .collect();
    safetensors::serialize_to_file(tensors.iter().map(|(n, t)| (n.as_str(), t)), Some(meta), path)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path, device: &Device) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let cfg_json = meta
        .get(CONFIG_KEY)
        .ok_or_else(|| Error::Checkpoint(format!("{} has no {CONFIG_KEY} metadata", path.display())))?;
    let cfg: ModelConfig = serde_json::from_str(cfg_json)?;
    let manifest = match meta.get(MANIFEST_KEY) {
        Some(m) => serde_json::from_str(m)?,
        None => serde_json::Value::Null,
    };
    let tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
    let dtype = tensors.values().next().map_or(DType::F32, Tensor::dtype);
    let model = Model::new(cfg, 0, dtype, device)?;
    let expected = model.params().named_tensors().count();
    if expected != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {expected} tensors, found {}",
            tensors.len()
        )));
    }
    for (name, var) in model.params().named_tensors() {
        let t = tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.dims() != var.dims() || t.dtype() != dtype {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: expected {:?}, found {:?} {:?}",
                var.dims(),
                t.dims(),
                t.dtype()
            )));
        }
        var.set(t)?;
    }
    Ok(Checkpoint { model, manifest })
}
