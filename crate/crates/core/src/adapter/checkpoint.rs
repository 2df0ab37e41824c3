//! Checkpoint format: `b"T2L1"`, little-endian `u32` version, `u64` length
//! of a JSON header, the header (configs and counts), then the parameter
//! vector and the buffer vector as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdapterConfig, AdapterParams};
use crate::backbone::{LlmConfig, TfmConfig};
use crate::error::{Result, T2lError};
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"T2L1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub adapter: AdapterConfig,
    pub tfm: TfmConfig,
    pub llm: LlmConfig,
    pub param_count: usize,
    pub buffer_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: AdapterParams<f64>,
}

impl Checkpoint {
    pub fn new<T: Real>(adapter: &AdapterConfig, tfm: &TfmConfig, llm: &LlmConfig, params: &AdapterParams<T>) -> Self {
        let params = params.cast::<f64>();
        Checkpoint {
            header: CheckpointHeader {
                adapter: adapter.clone(),
                tfm: tfm.clone(),
                llm: llm.clone(),
                param_count: params.params.len(),
                buffer_count: params.buffers.len(),
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * (self.params.params.len() + self.params.buffers.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.params.iter().chain(&self.params.buffers) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| T2lError::Incompatible {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing T2L1 magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("checkpoint version {version}, this build reads {VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        let payload = &bytes[16 + hlen..];
        let want = 8 * (header.param_count + header.buffer_count);
        if payload.len() != want {
            return Err(bad(format!("payload has {} bytes, expected {want}", payload.len())));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let params = values.by_ref().take(header.param_count).collect();
        let buffers = values.collect();
        Ok(Checkpoint {
            header,
            params: AdapterParams { params, buffers },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| T2lError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| T2lError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
