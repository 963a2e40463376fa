//! Checkpoint directories: `manifest.json` plus one little-endian f64 blob
//! per parameter tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::DatasetMeta;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{TrainedModel, TrainingMeta};

pub const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub config: PipelineConfig,
    pub meta: DatasetMeta,
    pub training: TrainingMeta,
    pub tensors: Vec<TensorEntry>,
}

pub fn save(dir: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::with_capacity(model.params.len());
    for (_, p) in model.params.iter() {
        let file = format!("{}.bin", p.name);
        let bytes: Vec<u8> = p.value.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        config: model.config.clone(),
        meta: model.meta.clone(),
        training: model.training,
        tensors,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint format {}",
            path.display(),
            m.format
        )));
    }
    Ok(m)
}

/// Rebuilds the network from the stored configuration and overwrites every
/// parameter with the stored values.
pub fn load(dir: impl AsRef<Path>) -> Result<TrainedModel> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let mut model = TrainedModel::init(&manifest.config, &manifest.meta)?;
    if manifest.tensors.len() != model.params.len() {
        return Err(Error::Data(format!(
            "checkpoint holds {} tensors, model expects {}",
            manifest.tensors.len(),
            model.params.len()
        )));
    }
    for entry in &manifest.tensors {
        let id = model
            .params
            .id(&entry.name)
            .ok_or_else(|| Error::Data(format!("checkpoint tensor {} is not a model parameter", entry.name)))?;
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Data(format!("{}: truncated tensor data", path.display())));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
            .collect();
        let t = Tensor::new(entry.shape.clone(), data).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        model.params.set(id, t)?;
    }
    model.training = manifest.training;
    Ok(model)
}
