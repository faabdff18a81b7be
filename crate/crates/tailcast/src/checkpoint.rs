//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DIGNN1"            magic
//! u32                 format version
//! u64 + bytes         JSON config block
//! u32                 tensor count
//! per tensor:
//!   u32 + bytes       name (UTF-8)
//!   u32               rank
//!   u64 × rank        shape
//!   f64 × len         payload
//! [u8; 32]            SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use tailcast_core::autodiff::Tensor;
use tailcast_core::dataset::NormStats;
use tailcast_core::graph::{GraphSpec, NegativeCorrelation};
use tailcast_core::model::{GatModel, ModelConfig, ModelError, TrainedModel};
use tailcast_core::pipeline::PipelineConfig;

pub const MAGIC: &[u8; 6] = b"DIGNN1";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("truncated checkpoint")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("config block: {0}")]
    Config(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    pipeline: PipelineConfig,
    station_ids: Vec<String>,
    sparsify_threshold: Option<f64>,
    negative: NegativeCorrelation,
}

/// A trained model plus the data preparation it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub trained: TrainedModel,
    pub pipeline: PipelineConfig,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let t = &ckpt.trained;
    let header = Header {
        model: t.model.config.clone(),
        pipeline: ckpt.pipeline.clone(),
        station_ids: t.graph.station_ids.clone(),
        sparsify_threshold: t.graph.sparsify_threshold,
        negative: t.graph.negative,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, json.len() as u64);
    out.extend_from_slice(&json);

    let n = t.graph.n();
    let f = t.norm.mean.len();
    let scaled: Vec<f64> = t.norm.scaled.iter().map(|&s| f64::from(u8::from(s))).collect();
    let extra: [(&str, Vec<usize>, &[f64]); 6] = [
        ("norm.mean", vec![f], &t.norm.mean),
        ("norm.sd", vec![f], &t.norm.sd),
        ("norm.scaled", vec![f], &scaled),
        ("graph.rho", vec![n, n], &t.graph.rho),
        ("graph.w", vec![n], &t.graph.w),
        ("graph.a", vec![n, n], &t.graph.a),
    ];
    put_u32(&mut out, (t.model.params.len() + extra.len()) as u32);
    for (name, p) in t.model.names.iter().zip(&t.model.params) {
        put_tensor(&mut out, name, p.shape(), p.data());
    }
    for (name, shape, data) in &extra {
        put_tensor(&mut out, name, shape, data);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated)
    }
}

fn take_tensor(tensors: &mut Vec<(String, Tensor)>, name: &str, len: usize) -> Result<Vec<f64>, CheckpointError> {
    let i = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor `{name}`")))?;
    let (_, t) = tensors.remove(i);
    if t.len() != len {
        return Err(CheckpointError::Corrupt(format!(
            "`{name}` has {} values, expected {len}",
            t.len()
        )));
    }
    Ok(t.into_data())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(CheckpointError::Truncated);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut c = Cursor {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = c.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let json_len = c.len()?;
    let header: Header = serde_json::from_slice(c.take(json_len)?)?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.len()).collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated)?;
        let raw = c.take(len.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data)));
    }
    if c.pos != body.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }

    let n = header.station_ids.len();
    let f = header.model.n_features();
    let mean = take_tensor(&mut tensors, "norm.mean", f)?;
    let sd = take_tensor(&mut tensors, "norm.sd", f)?;
    let scaled = take_tensor(&mut tensors, "norm.scaled", f)?.iter().map(|&v| v != 0.0).collect();
    let rho = take_tensor(&mut tensors, "graph.rho", n * n)?;
    let w = take_tensor(&mut tensors, "graph.w", n)?;
    let a = take_tensor(&mut tensors, "graph.a", n * n)?;
    let (names, params) = tensors.into_iter().unzip();
    let model = GatModel::from_parts(header.model, names, params)?;
    Ok(Checkpoint {
        trained: TrainedModel {
            model,
            norm: NormStats { mean, sd, scaled },
            graph: GraphSpec {
                station_ids: header.station_ids,
                rho,
                w,
                a,
                sparsify_threshold: header.sparsify_threshold,
                negative: header.negative,
            },
        },
        pipeline: header.pipeline,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, encode(ckpt)?).map_err(io)
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tailcast_core::dataset::{FeatureMode, SplitSpec};

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            mode: FeatureMode::Baseline,
            c_in: 2,
            c_out: 1,
            hidden_dim: 4,
            n_heads: 2,
            ..ModelConfig::default()
        };
        let model = GatModel::init(config).unwrap();
        let rho = vec![1.0, 0.25, 0.25, 1.0];
        let graph = GraphSpec::new(vec!["A".into(), "B".into()], rho, vec![1.0, 1.0], None, NegativeCorrelation::Clamp)
            .unwrap();
        let norm = NormStats {
            mean: (0..13).map(|k| k as f64 / 3.0).collect(),
            sd: vec![0.1; 13],
            scaled: (0..13).map(|k| k != 0).collect(),
        };
        let d = |y, m, dd| chrono::NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let split = SplitSpec::new(d(2020, 12, 31), d(2021, 1, 1)).unwrap();
        Checkpoint {
            trained: TrainedModel { model, norm, graph },
            pipeline: PipelineConfig::new(FeatureMode::Baseline, 2, 1, split),
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = encode(&c).unwrap();
        assert_eq!(&bytes[..6], b"DIGNN1");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = encode(&sample()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode(&bytes), Err(CheckpointError::ChecksumMismatch)));
        assert!(matches!(decode(b"PK\x03\x04"), Err(CheckpointError::BadMagic)));
        let good = encode(&sample()).unwrap();
        assert!(matches!(decode(&good[..20]), Err(CheckpointError::Truncated | CheckpointError::ChecksumMismatch)));
    }
}
