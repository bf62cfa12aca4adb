//! Model checkpoints.
//!
//! A checkpoint is one JSON document:
//!
//! ```json
//! {"format": "motion-vae-checkpoint", "version": 1,
//!  "config": { ...ModelConfig... },
//!  "tensors": [{"name": "encoder.input.weight", "shape": [43, 64], "data": [...]}, ...]}
//! ```
//!
//! `data` is row-major. Tensors are listed in creation order, which is fixed
//! by the config, and every tensor must be present with its expected shape.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, MotionVae};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "motion-vae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

pub fn model_to_json(model: &MotionVae) -> Result<String> {
    let tensors = model
        .store()
        .iter()
        .map(|(name, value)| TensorRecord {
            name: name.to_string(),
            shape: [value.nrows(), value.ncols()],
            data: value.iter().copied().collect(),
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        tensors,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_json(text: &str) -> Result<MotionVae> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::parse("format", format!("expected `{CHECKPOINT_FORMAT}`, found `{}`", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::parse("version", format!("unsupported checkpoint version {}", file.version)));
    }
    let mut model = MotionVae::new(file.config, 0)?;
    let ids: Vec<_> = model.store().ids().collect();
    if file.tensors.len() != ids.len() {
        return Err(Error::parse(
            "tensors",
            format!("expected {} tensors, found {}", ids.len(), file.tensors.len()),
        ));
    }
    for (i, (id, rec)) in ids.into_iter().zip(file.tensors).enumerate() {
        let field = format!("tensors[{i}]");
        let expected_name = model.store().name(id).to_string();
        if rec.name != expected_name {
            return Err(Error::parse(format!("{field}.name"), format!("expected `{expected_name}`, found `{}`", rec.name)));
        }
        let dim = model.store().get(id).dim();
        if (rec.shape[0], rec.shape[1]) != dim {
            return Err(Error::parse(
                format!("{field}.shape"),
                format!("`{}` should be {:?}, found {:?}", rec.name, dim, rec.shape),
            ));
        }
        let value = Array2::from_shape_vec(dim, rec.data)
            .map_err(|_| Error::parse(format!("{field}.data"), "length does not match shape"))?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(format!("{field}.data"), "non-finite value"));
        }
        *model.store_mut().get_mut(id) = value;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &MotionVae, path: impl AsRef<Path>) -> Result<()> {
    crate::util::write_atomic(path.as_ref(), model_to_json(model)?.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MotionVae> {
    model_from_json(&std::fs::read_to_string(path)?)
}
