//! Checkpoints: one safetensors archive holding every parameter, buffer and
//! momentum tensor under its hierarchical name, with a JSON manifest stored
//! in the archive's metadata under the `manifest` key.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::{GatedModel, ModelConfig};
use crate::datasets::Normalization;
use crate::error::{Error, Result};
use crate::nn::{for_each_buffer, for_each_param, Sgd};

const MANIFEST_KEY: &str = "manifest";
const VELOCITY_PREFIX: &str = "optim.velocity.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelConfig,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: usize,
    pub normalization: Option<Normalization>,
}

/// A checkpoint read back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Captures the model (and optimizer momentum, if given).
    pub fn capture(model: &mut GatedModel, optimizer: Option<&Sgd>, manifest: CheckpointManifest) -> Self {
        let mut tensors = BTreeMap::new();
        for_each_param(model, |name, p| {
            tensors.insert(name.to_owned(), (p.shape().to_vec(), p.value.clone()));
        });
        for_each_buffer(model, |name, b| {
            tensors.insert(name.to_owned(), (b.shape().to_vec(), b.value.clone()));
        });
        if let Some(opt) = optimizer {
            for (name, v) in opt.velocity() {
                tensors.insert(format!("{VELOCITY_PREFIX}{name}"), (vec![v.len()], v.clone()));
            }
        }
        Self { manifest, tensors }
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Rebuilds the model described by the manifest and loads its state.
    pub fn restore_model(&self) -> Result<GatedModel> {
        let mut model = GatedModel::assemble(self.manifest.model.clone(), self.manifest.seed)?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Overwrites every parameter and buffer of `model`. Every tensor the
    /// model expects must be present with a matching shape.
    pub fn load_into(&self, model: &mut GatedModel) -> Result<()> {
        let mut problem: Option<String> = None;
        let mut take = |name: &str, shape: &[usize], dst: &mut Vec<f32>| {
            if problem.is_some() {
                return;
            }
            match self.tensors.get(name) {
                None => problem = Some(format!("missing tensor {name}")),
                Some((s, _)) if s != shape => {
                    problem = Some(format!("tensor {name} has shape {s:?}, expected {shape:?}"))
                }
                Some((_, v)) => dst.clone_from(v),
            }
        };
        for_each_param(model, |name, p| {
            let shape = p.shape().to_vec();
            take(name, &shape, &mut p.value)
        });
        for_each_buffer(model, |name, b| {
            let shape = b.shape().to_vec();
            take(name, &shape, &mut b.value)
        });
        match problem {
            Some(msg) => Err(Error::Checkpoint(msg)),
            None => Ok(()),
        }
    }

    /// Momentum buffers, if the checkpoint holds any.
    pub fn velocity(&self) -> BTreeMap<String, Vec<f32>> {
        self.tensors
            .iter()
            .filter_map(|(k, (_, v))| k.strip_prefix(VELOCITY_PREFIX).map(|n| (n.to_owned(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<(&String, &Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, (shape, v))| (k, shape, v.iter().flat_map(|x| x.to_le_bytes()).collect()))
            .collect();
        let views = raw
            .iter()
            .map(|(k, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.to_vec(), bytes)
                    .map(|view| (k.as_str(), view))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let metadata = HashMap::from([(MANIFEST_KEY.to_owned(), serde_json::to_string(&self.manifest)?)]);
        safetensors::serialize(views, &Some(metadata)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |e: safetensors::SafeTensorError| Error::Checkpoint(e.to_string());
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(bad)?;
        let manifest = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(MANIFEST_KEY))
            .ok_or_else(|| Error::Checkpoint("archive has no manifest".into()))?;
        let manifest: CheckpointManifest = serde_json::from_str(manifest)?;
        let archive = SafeTensors::deserialize(bytes).map_err(bad)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in archive.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::Checkpoint(format!("tensor {name} is {:?}, expected F32", view.dtype())));
            }
            let values = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, (view.shape().to_vec(), values));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = self.to_bytes()?;
        // write then rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
