//! JSON dataset manifest pointing at feature files and frame ground truth.
//!
//! Relative paths are resolved against the manifest's directory. A frame
//! ground-truth file holds one `0` or `1` per line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_feature_file, write_feature_file, GridShape, VideoRecord};
use crate::io::{read_file, read_json, write_file, write_json};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub d: usize,
    pub grid: GridShape,
    pub frames_per_clip: usize,
    pub videos: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub feature_path: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_gt_path: Option<String>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_frame_gt(path: &Path) -> Result<Vec<u8>> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        reason: "frame ground truth is not UTF-8".into(),
    })?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let v = match line.trim() {
            "0" => 0,
            "1" => 1,
            "" => {
                offset += line.len() as u64 + 1;
                continue;
            }
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    reason: format!("expected 0 or 1, found {other:?}"),
                })
            }
        };
        out.push(v);
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

/// Loads every video listed in a manifest, checking each feature file
/// against the manifest's `d` and grid.
pub fn load_manifest(path: &Path) -> Result<(Manifest, Vec<VideoRecord>)> {
    let manifest: Manifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if manifest.d == 0 || manifest.grid.rows == 0 || manifest.grid.cols == 0 || manifest.frames_per_clip == 0 {
        return Err(Error::Data(format!("{}: d, grid and frames_per_clip must be positive", path.display())));
    }
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        let fpath = resolve(base, &entry.feature_path);
        let features = load_feature_file(&fpath)?;
        if features.d() != manifest.d {
            return Err(Error::incompatible(
                &format!("d of {}", entry.id),
                features.d(),
                format!("{} in manifest", manifest.d),
            ));
        }
        if features.grid() != manifest.grid {
            return Err(Error::incompatible(
                &format!("grid of {}", entry.id),
                features.grid(),
                format!("{} in manifest", manifest.grid),
            ));
        }
        let frame_gt = entry
            .frame_gt_path
            .as_ref()
            .map(|p| read_frame_gt(&resolve(base, p)))
            .transpose()?;
        let record = VideoRecord {
            id: entry.id.clone(),
            features,
            label: entry.label,
            frames_per_clip: manifest.frames_per_clip,
            frame_gt,
            anomaly_spans: Vec::new(),
        };
        record.validate()?;
        videos.push(record);
    }
    Ok((manifest, videos))
}

/// Writes `features/<id>.lstf`, `gt/<id>.txt` and `<name>` (the manifest)
/// under `dir`. Returns the manifest path.
pub fn write_dataset(videos: &[VideoRecord], dir: &Path, name: &str) -> Result<PathBuf> {
    let first = videos
        .first()
        .ok_or_else(|| Error::Data("cannot write an empty dataset".into()))?;
    let d = first.features.d();
    let grid = first.features.grid();
    let frames_per_clip = first.frames_per_clip;
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        if v.features.d() != d || v.features.grid() != grid || v.frames_per_clip != frames_per_clip {
            return Err(Error::Data(format!("{}: shape differs from the rest of the dataset", v.id)));
        }
        let feature_path = format!("features/{}.lstf", v.id);
        write_feature_file(&v.features, &dir.join(&feature_path))?;
        let frame_gt_path = match &v.frame_gt {
            Some(gt) => {
                let rel = format!("gt/{}.txt", v.id);
                let mut text = String::with_capacity(gt.len() * 2);
                for g in gt {
                    text.push(if *g == 1 { '1' } else { '0' });
                    text.push('\n');
                }
                write_file(&dir.join(&rel), text.as_bytes())?;
                Some(rel)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: v.id.clone(),
            feature_path,
            label: v.label,
            frame_gt_path,
        });
    }
    let manifest = Manifest {
        d,
        grid,
        frames_per_clip,
        videos: entries,
    };
    let path = dir.join(name);
    write_json(&path, &manifest)?;
    Ok(path)
}
