//! Single-file checkpoints in the safetensors layout.
//!
//! Tensor names are the canonical parameter paths
//! (`decoder.block.3.weight`, `encoder.stage2.block0.bn1.running_mean`, ...).
//! The header metadata carries `format = dirl-checkpoint-v1` and
//! `model_config`, the model configuration in `key = value` form.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::types::{parse_kv, ModelConfig};

const FORMAT: &str = "dirl-checkpoint-v1";

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => (Dtype::F32, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::Config(format!("cannot checkpoint dtype {other:?}"))),
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let tensors = model.store().named_tensors();
    let mut owned = Vec::with_capacity(tensors.len());
    for (name, t) in &tensors {
        let (dtype, bytes) = tensor_bytes(t)?;
        owned.push((name.clone(), dtype, t.dims().to_vec(), bytes));
    }
    let views = owned
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            safetensors::tensor::TensorView::new(*dtype, shape.clone(), bytes).map(|v| (name.as_str(), v))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let metadata = HashMap::from([
        ("format".to_string(), FORMAT.to_string()),
        ("model_config".to_string(), model.config().to_kv()),
    ]);
    let bytes = safetensors::serialize(views, Some(metadata)).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rebuilds the model described by the checkpoint and loads every tensor.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::format(path, msg);
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let meta = meta.metadata().clone().unwrap_or_default();
    if meta.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(bad("not a model checkpoint".into()));
    }
    let cfg_text = meta.get("model_config").ok_or_else(|| bad("missing model_config".into()))?;
    let cfg = ModelConfig::from_kv(&parse_kv(cfg_text)?)?;

    let tensors = st.tensors();
    let dtype = match tensors.first().map(|(_, v)| v.dtype()) {
        Some(Dtype::F64) => DType::F64,
        _ => DType::F32,
    };
    let model = Model::new(cfg, dtype, 0)?;
    let expected = model.store().named_tensors();
    if tensors.len() != expected.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, model expects {}",
            tensors.len(),
            expected.len()
        )));
    }
    for (name, view) in tensors {
        if !expected.contains_key(&name) {
            return Err(Error::Config(format!("checkpoint tensor {name} is not part of the model")));
        }
        let data = view.data();
        let t = match view.dtype() {
            Dtype::F32 => {
                let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, view.shape(), &Device::Cpu)?
            }
            Dtype::F64 => {
                let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, view.shape(), &Device::Cpu)?
            }
            other => return Err(bad(format!("{name}: unsupported dtype {other:?}"))),
        };
        model.store().set(&name, &t)?;
    }
    Ok(model)
}

/// Like [`load_checkpoint`], but fails with a config error when the stored
/// configuration differs from `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different model config:\n{}",
            path.display(),
            model.config().to_kv()
        )));
    }
    Ok(model)
}
