use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, ModelError, TransitionModel};
use crate::io::IoError;

const FORMAT: &str = "embedplan-checkpoint";

/// First line of a checkpoint file; the raw little-endian `f32` parameter
/// block follows the newline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    pub d_state: usize,
    pub d_action: usize,
    pub seed: u64,
    pub step: u64,
    pub epoch: u32,
    pub config_hash: String,
    pub n_params: usize,
}

pub fn checkpoint_bytes(model: &TransitionModel, step: u64, epoch: u32, config_hash: &str) -> Vec<u8> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: 1,
        arch: model.arch(),
        d_state: model.layout.d_state,
        d_action: model.layout.d_action,
        seed: model.seed,
        step,
        epoch,
        config_hash: config_hash.into(),
        n_params: model.param_count(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&model.params.to_le_bytes());
    out
}

pub fn save_checkpoint(
    path: &Path,
    model: &TransitionModel,
    step: u64,
    epoch: u32,
    config_hash: &str,
) -> Result<(), ModelError> {
    std::fs::write(path, checkpoint_bytes(model, step, epoch, config_hash))
        .map_err(|e| IoError::io(path, e).into())
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(TransitionModel, CheckpointHeader), ModelError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ModelError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let mut model = TransitionModel::init(header.arch, header.d_state, header.d_action, header.seed)?;
    let body = &bytes[nl + 1..];
    if model.param_count() != header.n_params || body.len() != header.n_params * 4 {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameters, header says {} and body holds {} bytes",
            model.param_count(),
            header.n_params,
            body.len()
        )));
    }
    for (d, c) in model.params.data.iter_mut().zip(body.chunks_exact(4)) {
        *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    }
    Ok((model, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(TransitionModel, CheckpointHeader), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    parse_checkpoint(&bytes)
}
