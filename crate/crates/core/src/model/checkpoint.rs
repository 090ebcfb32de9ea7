//! `LSTC` checkpoints.
//!
//! ```text
//! "LSTC" | version u32 | count u32 |
//! count × { name_len u32 | name UTF-8 | rank u32 | rank × extent u32 | f32 payload }
//! ```
//! Tensors are written in name order. A JSON sidecar at `<path>.json`
//! records the model shape and the seed it was initialized from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::data::GridShape;
use crate::io::{read_file, read_json, write_file, write_json, ByteReader, ByteWriter};
use crate::tensor::{ParamSet, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSTC";
pub const CHECKPOINT_FORMAT_VERSION: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub d: usize,
    /// Clips per model window (`C`).
    pub clips: usize,
    pub grid: GridShape,
    pub layers: usize,
    pub heads: usize,
    pub seed: u64,
    /// `"stn"` or `"ltn"`.
    pub network: String,
    /// Clips per training subset (`T` for STN, `C` for LTN).
    pub subset_clips: usize,
    pub frames_per_clip: usize,
}

impl CheckpointMeta {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            clips: self.clips,
            grid: self.grid,
            layers: self.layers,
            heads: self.heads,
        }
    }
}

pub fn checkpoint_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_checkpoint(params: &ParamSet) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_FORMAT_VERSION)?;
    w.u32(params.len())?;
    for (name, t) in params.iter() {
        w.u32(name.len())?;
        w.bytes(name.as_bytes());
        w.u32(t.rank())?;
        for &e in t.dims() {
            w.u32(e)?;
        }
        w.f32s(t.data());
    }
    Ok(w.finish())
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ParamSet> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(r.error(at, format!("unsupported version {version}, expected {CHECKPOINT_FORMAT_VERSION}")));
    }
    let count = r.u32("tensor count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u32("name length")?;
        let at = r.offset();
        let name = r.utf8(len, "tensor name")?;
        if params.contains(&name) {
            return Err(r.error(at, format!("duplicate tensor `{name}`")));
        }
        let rank = r.u32("rank")?;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32("extent")?);
        }
        let at = r.offset();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n > 0)
            .ok_or_else(|| r.error(at, format!("invalid extents {dims:?} for `{name}`")))?;
        let data = r.f32s(count, &format!("payload of `{name}`"))?;
        let t = Tensor::new(dims, data).map_err(|e| r.error(at, e.to_string()))?;
        params.insert(name, t);
    }
    r.expect_end()?;
    Ok(params)
}

/// Writes the binary checkpoint and its JSON sidecar.
pub fn write_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    if meta.model_config() != params.config {
        return Err(Error::incompatible(
            "checkpoint metadata",
            format!("{:?}", meta.model_config()),
            format!("{:?}", params.config),
        ));
    }
    write_file(path, &encode_checkpoint(&params.params)?)?;
    write_json(&checkpoint_sidecar_path(path), meta)
}

/// Reads a checkpoint and its sidecar and checks that every tensor has the
/// shape the sidecar's model configuration implies.
pub fn read_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(&checkpoint_sidecar_path(path))?;
    let config = meta.model_config();
    config.validate()?;
    let params = decode_checkpoint(&read_file(path)?, path)?;
    let expected = super::init_params(0, config)?;
    for (name, t) in expected.params.iter() {
        let got = params
            .get(name)
            .map_err(|_| Error::incompatible("checkpoint tensors", format!("missing `{name}`"), path.display()))?;
        if got.dims() != t.dims() {
            return Err(Error::incompatible(
                name,
                format!("{:?}", got.dims()),
                format!("{:?} expected from sidecar", t.dims()),
            ));
        }
    }
    if params.len() != expected.params.len() {
        return Err(Error::incompatible(
            "checkpoint tensor count",
            params.len(),
            expected.params.len(),
        ));
    }
    Ok((ModelParams { config, params }, meta))
}
