use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KaiModel, ModelConfig};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::io_util;
use crate::tensor::{ParamSet, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KAICKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model configuration, f32 weights, and the normalization the model was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
    pub norm_stats: Option<NormStats>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    parameters: Vec<ParamEntry>,
    norm_stats: Option<NormStats>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the payload.
    offset: usize,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &KaiModel<T>, norm_stats: Option<NormStats>) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().cast(),
            norm_stats,
        }
    }

    pub fn into_model<T: Scalar>(self) -> Result<KaiModel<T>> {
        KaiModel::from_params(self.config, self.params.cast())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let parameters = self
            .params
            .iter()
            .map(|p| {
                let e = ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    offset,
                };
                offset += p.value.numel();
                e
            })
            .collect();
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            parameters,
            norm_stats: self.norm_stats.clone(),
        };
        let payload = io_util::f32_to_le_bytes(
            self.params
                .iter()
                .flat_map(|p| p.value.data().iter().copied()),
        );
        io_util::encode_framed(CHECKPOINT_MAGIC, &header, &payload)
    }

    /// Parse and validate against the layout the stored configuration implies.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let (header, payload): (Header, _) = io_util::decode_framed(path, CHECKPOINT_MAGIC, bytes)?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: header.format_version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let total: usize = header
            .parameters
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        if payload.len() != total * 4 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                what: "parameter payload",
                expected: total * 4,
                actual: payload.len(),
            });
        }
        let values = io_util::le_bytes_to_f32(&payload);
        let mut params = ParamSet::new();
        for p in &header.parameters {
            let n: usize = p.shape.iter().product();
            let slice = values.get(p.offset..p.offset + n).ok_or_else(|| {
                Error::Data(format!(
                    "{}: parameter `{}` lies outside the payload",
                    path.display(),
                    p.name
                ))
            })?;
            params.add(
                p.name.clone(),
                Tensor::new(p.shape.clone(), slice.to_vec())?,
            )?;
        }
        // Fail on the first parameter that disagrees with the configuration.
        KaiModel::<f32>::from_params(header.config.clone(), params.clone())?;
        Ok(Self {
            config: header.config,
            params,
            norm_stats: header.norm_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io_util::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &io_util::read_file(path)?)
    }
}
