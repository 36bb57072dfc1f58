//! Versioned checkpoint container: a safetensors file whose metadata holds
//! the model configuration, resolution, target kind, and training step.
//! Parameter bytes round-trip bit-exactly.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::ModelState;
use crate::config::{ModelConfig, TargetConfig};
use crate::error::{Error, Result};
use crate::util::atomic_write;

pub const FORMAT_VERSION: u32 = 1;
const METADATA_KEY: &str = "header";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub toolkit_version: String,
    pub model: ModelConfig,
    pub resolution: usize,
    pub target: TargetConfig,
    pub step: u64,
    pub optimizer_step: Option<u64>,
    pub dtype: String,
}

fn dtype_name(dtype: DType) -> &'static str {
    match dtype {
        DType::F32 => "f32",
        DType::F64 => "f64",
        _ => "other",
    }
}

fn dtype_from_name(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unsupported dtype `{other}`"))),
    }
}

/// Serialize the model (and optionally the optimizer moments) to `path`.
pub fn save_checkpoint(
    state: &ModelState,
    target: &TargetConfig,
    optimizer: Option<&Adam>,
    path: &Path,
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        model: state.config().clone(),
        resolution: state.resolution(),
        target: target.clone(),
        step: state.step(),
        optimizer_step: optimizer.map(Adam::step_count),
        dtype: dtype_name(state.dtype()).to_string(),
    };
    let mut tensors = state.store().named_tensors();
    if let Some(opt) = optimizer {
        tensors.extend(opt.state_tensors());
    }
    let mut metadata = HashMap::new();
    metadata.insert(
        METADATA_KEY.to_string(),
        serde_json::to_string(&header).expect("header serializes"),
    );
    let named: Vec<(String, Tensor)> = tensors;
    let bytes = safetensors::serialize(
        named.iter().map(|(n, t)| (n.as_str(), t)),
        Some(metadata),
    )
    .map_err(|e| Error::Checkpoint(format!("serialize failed: {e}")))?;
    atomic_write(path, &bytes)
}

pub struct LoadedCheckpoint {
    pub state: ModelState,
    pub header: CheckpointHeader,
    /// Raw tensor map, including optimizer moments when present.
    pub tensors: HashMap<String, Tensor>,
}

impl LoadedCheckpoint {
    /// Rebuild an optimizer with moments restored, when they were saved.
    pub fn restore_optimizer(&self, lr: f64) -> Result<Option<Adam>> {
        let Some(t) = self.header.optimizer_step else {
            return Ok(None);
        };
        let mut opt = Adam::new(self.state.named_vars(), lr)?;
        opt.load_state(&self.tensors, t)?;
        Ok(Some(opt))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("bad checkpoint: {e}")))?;
    let header_json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(METADATA_KEY))
        .ok_or_else(|| Error::Checkpoint("checkpoint has no header metadata".into()))?;
    let header: CheckpointHeader = serde_json::from_str(header_json)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let dtype = dtype_from_name(&header.dtype)?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    let mut state = ModelState::new(&header.model, header.resolution, dtype, 0)?;
    state.store_mut().load_named(&tensors)?;
    state.set_step(header.step);
    Ok(LoadedCheckpoint {
        state,
        header,
        tensors,
    })
}
