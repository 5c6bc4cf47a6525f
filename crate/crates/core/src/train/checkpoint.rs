//! Binary checkpoint: `MFCK`, u32 version, u64 header length, JSON header,
//! then the float64 payload. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::tensor::{AdamState, ParamSet, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MFCK";
pub const VERSION: u32 = 1;

const OPT_M: &str = "opt.m/";
const OPT_V: &str = "opt.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamSet,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    optimizer_step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset into the payload.
    offset: u64,
    trainable: bool,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: String, t: &Tensor, trainable: bool| {
            tensors.push(TensorEntry {
                name,
                shape: t.shape(),
                offset: payload.len() as u64,
                trainable,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for p in self.params.iter() {
            push(p.name.clone(), &p.value, p.trainable);
        }
        for (n, t) in &self.optimizer.m {
            push(format!("{OPT_M}{n}"), t, false);
        }
        for (n, t) in &self.optimizer.v {
            push(format!("{OPT_V}{n}"), t, false);
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            optimizer_step: self.optimizer.step,
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 16 {
            return Err(corrupt("file shorter than the fixed header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let hend = 16usize
            .checked_add(usize::try_from(hlen).map_err(|_| corrupt("header length"))?)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header runs past end of file"))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend])
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let payload = &bytes[hend..];
        let mut params = ParamSet::new();
        let mut optimizer = AdamState {
            step: header.optimizer_step,
            ..AdamState::default()
        };
        let mut expected_offset = 0u64;
        for e in header.tensors {
            if e.offset != expected_offset {
                return Err(Error::CorruptCheckpoint(format!("{}: unexpected offset {}", e.name, e.offset)));
            }
            let n = e.shape[0]
                .checked_mul(e.shape[1])
                .ok_or_else(|| corrupt("tensor shape overflows"))?;
            let start = e.offset as usize;
            let end = start
                .checked_add(n * 8)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| Error::CorruptCheckpoint(format!("{}: payload truncated", e.name)))?;
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(e.shape[0], e.shape[1], data)?;
            expected_offset = end as u64;
            if let Some(n) = e.name.strip_prefix(OPT_M) {
                optimizer.m.insert(n.to_string(), t);
            } else if let Some(n) = e.name.strip_prefix(OPT_V) {
                optimizer.v.insert(n.to_string(), t);
            } else {
                params.insert(e.name, t, e.trainable);
            }
        }
        if expected_offset as usize != payload.len() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Checkpoint {
            config: header.config,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::file(path, e))?)
    }

    /// Loads and rejects a checkpoint whose code size or block count differs
    /// from `cfg`.
    pub fn load_checked(path: impl AsRef<Path>, cfg: &TrainConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.check_compatible(cfg)?;
        Ok(ck)
    }

    pub fn check_compatible(&self, cfg: &TrainConfig) -> Result<()> {
        let d = crate::autoencoder::code_dim(&self.params)?;
        if d != cfg.code_dim {
            return Err(Error::Config(format!("checkpoint has D={d}, config asks for D={}", cfg.code_dim)));
        }
        if let Ok(spec) = crate::flow::FlowSpec::from_params(&self.params) {
            if spec.blocks != cfg.blocks {
                return Err(Error::Config(format!(
                    "checkpoint has K={}, config asks for K={}",
                    spec.blocks, cfg.blocks
                )));
            }
        }
        Ok(())
    }
}
