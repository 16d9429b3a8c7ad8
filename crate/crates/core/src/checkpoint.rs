//! Checkpoints: a human-readable manifest next to a flat little-endian f64
//! payload.
//!
//! ```text
//! format = srnn-checkpoint-1
//! config_hash = <sha256 of the canonical config text>
//! epoch = 12
//! payload = model.bin
//! metric.loss = 0.31
//! config.hidden_channels = 16
//! tensor.convlstm.weight = 0 64x18x3x3     # byte offset, shape
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{Config, ModelConfig, KEYS};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const FORMAT: &str = "srnn-checkpoint-1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub epoch: usize,
    /// Free-form named metrics, written in name order.
    pub metrics: BTreeMap<String, f64>,
}

/// Paths of the manifest and payload for a checkpoint stem, e.g.
/// `out/model` gives `out/model.manifest` and `out/model.bin`.
pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("manifest"), stem.with_extension("bin"))
}

/// Writes `model` (whose config must equal `ckpt.config.model`).
pub fn save(stem: &Path, model: &Model, ckpt: &Checkpoint) -> Result<()> {
    if model.config != ckpt.config.model {
        return Err(Error::contract("checkpoint config does not describe the model"));
    }
    let (manifest_path, payload_path) = paths(stem);
    let mut manifest = format!(
        "format = {FORMAT}\nconfig_hash = {}\nepoch = {}\npayload = {}\n",
        ckpt.config.hash(),
        ckpt.epoch,
        payload_path.file_name().unwrap_or_default().to_string_lossy()
    );
    for (name, v) in &ckpt.metrics {
        manifest.push_str(&format!("metric.{name} = {v:?}\n"));
    }
    for (k, v) in ckpt.config.entries() {
        manifest.push_str(&format!("config.{k} = {v}\n"));
    }
    let mut payload = Vec::with_capacity(model.store.num_scalars() * 8);
    for p in model.store.iter() {
        let shape = p.value.shape().iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        manifest.push_str(&format!("tensor.{} = {} {shape}\n", p.name, payload.len()));
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&payload_path, payload).map_err(|e| Error::io(&payload_path, e))?;
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))
}

fn bad(message: impl Into<String>) -> Error {
    Error::Data(format!("bad checkpoint: {}", message.into()))
}

/// Loads a checkpoint from its manifest path (or stem) and rebuilds the
/// model with the stored parameters.
pub fn load(path: &Path) -> Result<(Model, Checkpoint)> {
    let (manifest_path, _) = paths(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut fields = BTreeMap::new();
    let mut config_text = String::new();
    let mut tensors = Vec::new();
    let mut metrics = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if let Some(key) = k.strip_prefix("config.") {
            config_text.push_str(&format!("{key} = {v}\n"));
        } else if let Some(name) = k.strip_prefix("tensor.") {
            tensors.push((name.to_string(), v.to_string()));
        } else if let Some(name) = k.strip_prefix("metric.") {
            metrics.insert(name.to_string(), v.parse().map_err(|_| bad(format!("metric `{name}`")))?);
        } else {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    if fields.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(bad(format!("expected format {FORMAT}")));
    }
    let config = Config::parse(&config_text)?;
    if fields.get("config_hash") != Some(&config.hash()) {
        return Err(bad("config hash mismatch"));
    }
    if config_text.lines().count() != KEYS.len() {
        return Err(bad("incomplete config section"));
    }
    let epoch = fields.get("epoch").and_then(|e| e.parse().ok()).ok_or_else(|| bad("missing epoch"))?;
    let payload_name = fields.get("payload").ok_or_else(|| bad("missing payload"))?;
    let payload_path = manifest_path.with_file_name(payload_name);
    let payload = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;

    let mut model = Model::build(&config.model, 0)?;
    if tensors.len() != model.store.len() {
        return Err(bad(format!("{} tensors listed, model has {}", tensors.len(), model.store.len())));
    }
    for (name, entry) in tensors {
        let id = model.store.find(&name).ok_or_else(|| bad(format!("unknown tensor `{name}`")))?;
        let (offset, shape) = entry.split_once(' ').ok_or_else(|| bad(format!("tensor entry `{entry}`")))?;
        let offset: usize = offset.parse().map_err(|_| bad(format!("offset of `{name}`")))?;
        let shape = shape
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("shape of `{name}`")))?;
        if shape != model.store.get(id).shape() {
            return Err(bad(format!(
                "`{name}` has shape {shape:?}, model expects {:?}",
                model.store.get(id).shape()
            )));
        }
        let len: usize = shape.iter().product();
        let bytes = payload
            .get(offset..offset + len * 8)
            .ok_or_else(|| bad(format!("`{name}` runs past the payload")))?;
        let data =
            bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect();
        *model.store.get_mut(id) = Tensor::new(&shape, data)?;
    }
    Ok((model, Checkpoint { config, epoch, metrics }))
}

/// Model config stored in a checkpoint, without loading the payload.
pub fn read_model_config(path: &Path) -> Result<ModelConfig> {
    Ok(load(path)?.0.config)
}
