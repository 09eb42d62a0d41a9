//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, `u64` header
//! length, JSON header (metadata plus parameter names and shapes), raw
//! little-endian `f32` parameter data in header order, and a SHA-256 digest
//! of everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::model_zoo::{HeadTask, ModelSpec, Network};
use crate::train::TrainHyper;

pub const MAGIC: &[u8; 8] = b"EMSSCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;

/// Everything in a checkpoint except the parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub head_task: HeadTask,
    pub head_channels: usize,
    pub task: Task,
    /// Epoch at which the checkpoint was written (end of its window).
    pub epoch: usize,
    /// Epoch whose parameters are stored.
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub metric: MetricKind,
    /// Initialization tag such as `R` or `P(50k)`.
    pub provenance: String,
    pub hyper: TrainHyper,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    params: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct CheckpointRecord {
    pub meta: CheckpointMeta,
    pub params: BTreeMap<String, Tensor>,
    pub version: u32,
}

impl CheckpointRecord {
    pub fn from_network(net: &Network, meta: CheckpointMeta) -> Result<Self> {
        Self::from_snapshot(net.snapshot()?, meta)
    }

    pub fn from_snapshot(params: BTreeMap<String, Tensor>, meta: CheckpointMeta) -> Result<Self> {
        Ok(Self {
            meta,
            params,
            version: FORMAT_VERSION,
        })
    }

    /// Rebuilds the network exactly as stored.
    pub fn to_network(&self) -> Result<Network> {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| Ok((k.clone(), Var::from_tensor(&t.copy()?)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Network::from_parts(
            self.meta.spec.clone(),
            vars,
            self.meta.head_task,
            self.meta.head_channels,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            params: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), t.dims().to_vec()))
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREAMBLE_LEN + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.values() {
            for v in t.flatten_all()?.to_vec1::<f32>()? {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let malformed = |msg: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(malformed("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < PREAMBLE_LEN + DIGEST_LEN {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
            });
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let json = body
            .get(PREAMBLE_LEN..PREAMBLE_LEN + hlen)
            .ok_or_else(|| malformed("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(json)?;
        let mut data = &body[PREAMBLE_LEN + hlen..];
        let mut params = BTreeMap::new();
        for (name, shape) in header.params {
            let n: usize = shape.iter().product();
            if data.len() < n * 4 {
                return Err(malformed("parameter data shorter than header declares"));
            }
            let (chunk, rest) = data.split_at(n * 4);
            let vals: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            params.insert(name, Tensor::from_vec(vals, shape.as_slice(), &crate::device())?);
            data = rest;
        }
        if !data.is_empty() {
            return Err(malformed("trailing bytes after parameter data"));
        }
        Ok(Self {
            meta: header.meta,
            params,
            version,
        })
    }

    /// Writes atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn save_checkpoint(record: &CheckpointRecord, path: &Path) -> Result<()> {
    record.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    CheckpointRecord::load(path)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
