//! `LSTF` feature files.
//!
//! ```text
//! "LSTF" | version u32 | num_clips u32 | P_h u32 | P_w u32 | d u32 |
//! num_clips·P_h·P_w·d × f32, row-major (clip, row, col, channel)
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::{FeatureVolume, GridShape};
use crate::io::{read_file, write_file, ByteReader, ByteWriter};
use crate::Result;

pub const FEATURE_MAGIC: &[u8; 4] = b"LSTF";
pub const FEATURE_FORMAT_VERSION: usize = 1;

pub fn encode_feature_file(volume: &FeatureVolume) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(FEATURE_MAGIC);
    w.u32(FEATURE_FORMAT_VERSION)?;
    w.u32(volume.num_clips())?;
    w.u32(volume.grid().rows)?;
    w.u32(volume.grid().cols)?;
    w.u32(volume.d())?;
    w.f32s(volume.values());
    Ok(w.finish())
}

pub fn decode_feature_file(bytes: &[u8], path: &Path) -> Result<FeatureVolume> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(FEATURE_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != FEATURE_FORMAT_VERSION {
        return Err(r.error(at, format!("unsupported version {version}, expected {FEATURE_FORMAT_VERSION}")));
    }
    let header_end = r.offset();
    let num_clips = r.u32("num_clips")?;
    let rows = r.u32("P_h")?;
    let cols = r.u32("P_w")?;
    let d = r.u32("d")?;
    if num_clips == 0 || rows == 0 || cols == 0 || d == 0 {
        return Err(r.error(header_end, format!("zero extent in header ({num_clips}, {rows}, {cols}, {d})")));
    }
    let count = num_clips * rows * cols * d;
    let values = r.f32s(count, "feature payload")?;
    r.expect_end()?;
    FeatureVolume::new(num_clips, GridShape::new(rows, cols), d, values)
}

pub fn write_feature_file(volume: &FeatureVolume, path: &Path) -> Result<()> {
    write_file(path, &encode_feature_file(volume)?)
}

pub fn load_feature_file(path: &Path) -> Result<FeatureVolume> {
    decode_feature_file(&read_file(path)?, path)
}
