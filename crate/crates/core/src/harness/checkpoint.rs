//! Checkpoint container: an 8-byte magic, a little-endian `u64` metadata
//! length, the JSON metadata, then every array's values as little-endian
//! `f64` in metadata order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::Adam;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tasks::Algorithm;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DEARCKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    version: u32,
    run: RunConfig,
    model: ModelConfig,
    algorithm: Algorithm,
    epoch: usize,
    valid_task_loss: Option<f64>,
    adam_step: Option<u64>,
    learning_rate: Option<f64>,
    arrays: Vec<ArrayMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub params: ModelParams,
    pub optimizer: Option<Adam>,
    pub epoch: usize,
    pub valid_task_loss: Option<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut values: Vec<&Tensor> = Vec::new();
        for (name, t) in self.params.iter() {
            arrays.push(ArrayMeta {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            });
            values.push(t);
        }
        if let Some(adam) = &self.optimizer {
            for (prefix, moments) in [("m.", &adam.m), ("v.", &adam.v)] {
                for (name, t) in self.params.names().iter().zip(moments) {
                    arrays.push(ArrayMeta {
                        name: format!("{prefix}{name}"),
                        shape: t.shape().to_vec(),
                    });
                    values.push(t);
                }
            }
        }
        let meta = Meta {
            version: CHECKPOINT_VERSION,
            run: self.run.clone(),
            model: self.params.config.clone(),
            algorithm: self.params.algorithm,
            epoch: self.epoch,
            valid_task_loss: self.valid_task_loss,
            adam_step: self.optimizer.as_ref().map(|a| a.step),
            learning_rate: self.optimizer.as_ref().map(|a| a.lr),
            arrays,
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::contract(e.to_string()))?;
        let total: usize = values.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * total);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in values {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Parse { line: 0, msg };
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(bad("truncated metadata".into()));
        }
        let meta: Meta =
            serde_json::from_slice(&body[..len]).map_err(|e| bad(format!("metadata: {e}")))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", meta.version)));
        }
        let mut data = body[len..].chunks_exact(8);
        let mut arrays = HashMap::new();
        for a in &meta.arrays {
            let n: usize = a.shape.iter().product();
            if data.len() < n {
                return Err(bad(format!("truncated array `{}`", a.name)));
            }
            let values: Vec<f64> = data
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.insert(a.name.clone(), Tensor::new(a.shape.clone(), values)?);
        }
        if data.len() != 0 || !data.remainder().is_empty() {
            return Err(bad("trailing bytes after arrays".into()));
        }
        let params = ModelParams::from_named(&meta.model, meta.algorithm, &arrays)?;
        let optimizer = match (meta.adam_step, meta.learning_rate) {
            (Some(step), Some(lr)) => {
                let take = |prefix: &str| -> Result<Vec<Tensor>> {
                    params
                        .names()
                        .iter()
                        .map(|n| {
                            arrays.get(&format!("{prefix}{n}")).cloned().ok_or_else(|| {
                                bad(format!("missing optimizer moment `{prefix}{n}`"))
                            })
                        })
                        .collect()
                };
                Some(Adam {
                    lr,
                    step,
                    m: take("m.")?,
                    v: take("v.")?,
                })
            }
            _ => None,
        };
        Ok(Checkpoint {
            run: meta.run,
            params,
            optimizer,
            epoch: meta.epoch,
            valid_task_loss: meta.valid_task_loss,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
