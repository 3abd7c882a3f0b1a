//! Checkpoints: `checkpoint.json` (config, head, parameter table, extras)
//! and `checkpoint.f64`, the parameter values as little-endian f64 in
//! declaration order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::least::LeastModel;
use crate::downstream::heads::{HeadSpec, Standardizer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const CHECKPOINT_BLOB: &str = "checkpoint.f64";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: ModelConfig,
    pub head: Option<HeadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_standardizer: Option<Standardizer>,
    pub params: Vec<ParamEntry>,
    /// Free-form metadata such as a survival baseline or training step.
    #[serde(default)]
    pub extras: BTreeMap<String, serde_json::Value>,
}

pub fn save(model: &LeastModel, dir: &Path, extras: BTreeMap<String, serde_json::Value>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        version: VERSION,
        config: model.cfg.clone(),
        head: model.head.as_ref().map(|h| h.spec),
        head_standardizer: model.head.as_ref().and_then(|h| h.standardizer.clone()),
        params: model
            .store
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                frozen: p.frozen,
            })
            .collect(),
        extras,
    };
    let mut blob = Vec::with_capacity(model.store.iter().map(|p| p.value.numel() * 8).sum());
    for p in model.store.iter() {
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let path = dir.join(CHECKPOINT_BLOB);
    fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_slice(&text)?;
    if m.version != VERSION {
        return Err(Error::Data(format!("checkpoint version {} is not supported", m.version)));
    }
    Ok(m)
}

/// Rebuilds the model (and head) from disk. Parameter names and shapes must
/// match the architecture implied by the stored config exactly.
pub fn load(dir: &Path) -> Result<(LeastModel, BTreeMap<String, serde_json::Value>)> {
    let m = read_manifest(dir)?;
    let mut model = LeastModel::new(m.config.clone(), 0)?;
    if let Some(spec) = m.head {
        model.attach_head(spec, 0)?;
    }
    if model.store.len() != m.params.len() {
        return Err(Error::Data(format!(
            "checkpoint lists {} parameters, architecture has {}",
            m.params.len(),
            model.store.len()
        )));
    }
    let path = dir.join(CHECKPOINT_BLOB);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let total: usize = m.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != total * 8 {
        return Err(Error::Data(format!("checkpoint blob holds {} bytes, expected {}", blob.len(), total * 8)));
    }
    let mut values = Vec::with_capacity(m.params.len());
    let mut off = 0;
    for e in &m.params {
        let n: usize = e.shape.iter().product();
        let data = blob[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        off += n * 8;
        values.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    model.store.load_values(values)?;
    if let Some(h) = model.head.as_mut() {
        h.standardizer = m.head_standardizer;
    }
    for e in &m.params {
        if let Some(p) = model.store.by_name_mut(&e.name) {
            p.frozen = e.frozen;
        }
    }
    Ok((model, m.extras))
}
