use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{NetConfig, Policy, PolicyParams, TensorInfo};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub schema_version: u32,
    pub config: NetConfig,
    pub init_seed: u64,
    pub param_count: usize,
    pub tensors: Vec<NamedTensor>,
}

impl CheckpointFile {
    pub fn from_params(p: &PolicyParams) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: p.config.clone(),
            init_seed: p.init_seed,
            param_count: p.count(),
            tensors: p
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    values: p.values[t.range()].to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_policy(self) -> Result<Policy> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint schema_version {}",
                self.schema_version
            )));
        }
        let mut tensors = Vec::with_capacity(self.tensors.len());
        let mut values = Vec::with_capacity(self.param_count);
        for t in self.tensors {
            let n: usize = t.shape.iter().product();
            if n != t.values.len() {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.values.len()
                )));
            }
            tensors.push(TensorInfo {
                name: t.name,
                shape: t.shape,
                offset: values.len(),
            });
            values.extend(t.values);
        }
        Policy::from_params(PolicyParams {
            config: self.config,
            init_seed: self.init_seed,
            tensors,
            values,
        })
    }
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams) -> Result<()> {
    crate::dataset::write_json(path, &CheckpointFile::from_params(params))
}

pub fn load_checkpoint(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    file.into_policy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;

    #[test]
    fn round_trip_gives_identical_predictions() {
        let p = Policy::new(NetConfig::fast(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &p.params).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(q.params, p.params);
        let img = ImageTensor::filled(32, 32, [0.2, 0.7, 0.4]);
        assert_eq!(p.predict(&img).unwrap(), q.predict(&img).unwrap());
    }

    #[test]
    fn mismatched_tensors_are_rejected() {
        let p = Policy::new(NetConfig::small(), 0).unwrap();
        let mut f = CheckpointFile::from_params(&p.params);
        f.tensors[0].values.pop();
        assert!(f.clone().into_policy().is_err());
        let mut f = CheckpointFile::from_params(&p.params);
        f.tensors.swap(0, 1);
        assert!(f.into_policy().is_err());
    }
}
