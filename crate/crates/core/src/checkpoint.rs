//! Model checkpoints: architecture, layer sizes, named tensors and the
//! action groups the model was built for, as one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::ActionGroups;
use crate::error::{AcpError, Result};
use crate::io::{from_json, read_to_string, write_atomic};
use crate::predictor::{ArchKind, ModelDims, ModelParams};

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    arch: ArchKind,
    dims: ModelDims,
    #[serde(default)]
    groups: Option<serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub groups: Option<ActionGroups>,
}

impl Checkpoint {
    pub fn to_json_string(&self) -> String {
        let file = CheckpointFile {
            arch: self.params.arch,
            dims: self.params.dims,
            groups: self
                .groups
                .as_ref()
                .map(|g| serde_json::from_str(&g.to_json_string()).expect("groups JSON is valid")),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, shape, data)| TensorEntry {
                    name,
                    shape,
                    data: data.to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CheckpointFile = from_json(text)?;
        let groups = file
            .groups
            .map(|v| ActionGroups::from_json_str(&v.to_string()))
            .transpose()?;
        let mut params = ModelParams::zeros(file.dims, file.arch, groups.as_ref())?;
        let expected: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != file.tensors.len() {
            return Err(AcpError::parse(
                "tensors",
                format!("{} tensors, {} expects {}", file.tensors.len(), file.arch, expected.len()),
            ));
        }
        for (k, ((name, shape), entry)) in expected.iter().zip(&file.tensors).enumerate() {
            if *name != entry.name || *shape != entry.shape {
                return Err(AcpError::parse(
                    format!("tensors[{k}]"),
                    format!("expected {name} {shape:?}, found {} {:?}", entry.name, entry.shape),
                ));
            }
            if entry.data.len() != shape.iter().product::<usize>() {
                return Err(AcpError::parse(format!("tensors[{k}].data"), "length does not match shape"));
            }
        }
        for (dst, entry) in params.tensors_mut().into_iter().zip(file.tensors) {
            *dst = entry.data;
        }
        Ok(Checkpoint { params, groups })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json_string().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&read_to_string(path)?)
    }
}
