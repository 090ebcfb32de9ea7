//! Feature volumes, video records and the ways to obtain them: a synthetic
//! generator with planted anomalies, a binary feature file plus JSON
//! manifest, and the subset samplers used for training and inference.

mod features;
mod manifest;
mod sampling;
mod synth;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use features::{
    decode_feature_file, encode_feature_file, load_feature_file, write_feature_file,
    FEATURE_FORMAT_VERSION, FEATURE_MAGIC,
};
pub use manifest::{load_manifest, write_dataset, Manifest, ManifestEntry};
pub use sampling::{enumerate_inference_windows, sample_subsets, SubsetSample};
pub use synth::{generate_dataset, SynthConfig};

/// Tubelet grid extents `(P_h, P_w)` of a feature volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", from = "[usize; 2]")]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    /// Tubelets per clip, `N_t = P_h · P_w`.
    pub fn tubelets(&self) -> usize {
        self.rows * self.cols
    }
}

impl From<[usize; 2]> for GridShape {
    fn from(v: [usize; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<GridShape> for [usize; 2] {
    fn from(g: GridShape) -> Self {
        [g.rows, g.cols]
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Per-video tubelet features laid out `(clip, row, col, channel)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    num_clips: usize,
    grid: GridShape,
    d: usize,
    values: Vec<f64>,
}

impl FeatureVolume {
    pub fn new(num_clips: usize, grid: GridShape, d: usize, values: Vec<f64>) -> Result<Self> {
        if num_clips == 0 || grid.rows == 0 || grid.cols == 0 || d == 0 {
            return Err(Error::Data(format!(
                "feature volume extents must be positive (clips={num_clips}, grid={grid}, d={d})"
            )));
        }
        let expected = num_clips * grid.tubelets() * d;
        if values.len() != expected {
            return Err(Error::Data(format!(
                "feature volume holds {} values, expected {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value at index {i}")));
        }
        Ok(Self {
            num_clips,
            grid,
            d,
            values,
        })
    }

    pub fn num_clips(&self) -> usize {
        self.num_clips
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn clip_stride(&self) -> usize {
        self.grid.tubelets() * self.d
    }

    pub fn tubelet(&self, clip: usize, row: usize, col: usize) -> &[f64] {
        let start = clip * self.clip_stride() + (row * self.grid.cols + col) * self.d;
        &self.values[start..start + self.d]
    }

    /// Features of clips `[start, start + len)`, already in token order
    /// (clip-major, then row-major over the grid).
    pub fn clips(&self, start: usize, len: usize) -> Result<&[f64]> {
        if len == 0 || start + len > self.num_clips {
            return Err(Error::Data(format!(
                "clip window [{start}, {}) outside video of {} clips",
                start + len,
                self.num_clips
            )));
        }
        let s = self.clip_stride();
        Ok(&self.values[start * s..(start + len) * s])
    }
}

/// A planted anomaly: clips `[clip_start, clip_end)` restricted to a
/// rectangular block of tubelets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalySpan {
    pub clip_start: usize,
    pub clip_end: usize,
    pub rows: std::ops::Range<usize>,
    pub cols: std::ops::Range<usize>,
}

impl AnomalySpan {
    pub fn contains(&self, clip: usize, row: usize, col: usize) -> bool {
        (self.clip_start..self.clip_end).contains(&clip)
            && self.rows.contains(&row)
            && self.cols.contains(&col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureVolume,
    /// Video-level label: 1 abnormal, 0 normal.
    pub label: u8,
    pub frames_per_clip: usize,
    /// Per-frame 0/1 ground truth, evaluation only.
    pub frame_gt: Option<Vec<u8>>,
    /// Planted anomaly locations (synthetic data only).
    pub anomaly_spans: Vec<AnomalySpan>,
}

impl VideoRecord {
    pub fn num_clips(&self) -> usize {
        self.features.num_clips()
    }

    pub fn num_frames(&self) -> usize {
        self.num_clips() * self.frames_per_clip
    }

    pub fn is_abnormal(&self) -> bool {
        self.label == 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Data(format!("{}: label must be 0 or 1, got {}", self.id, self.label)));
        }
        if self.frames_per_clip == 0 {
            return Err(Error::Data(format!("{}: frames_per_clip must be positive", self.id)));
        }
        if let Some(gt) = &self.frame_gt {
            if gt.len() != self.num_frames() {
                return Err(Error::Data(format!(
                    "{}: frame ground truth has {} entries, expected {} ({} clips x {} frames)",
                    self.id,
                    gt.len(),
                    self.num_frames(),
                    self.num_clips(),
                    self.frames_per_clip
                )));
            }
            if let Some(bad) = gt.iter().find(|&&v| v > 1) {
                return Err(Error::Data(format!("{}: frame ground truth value {bad} is not 0/1", self.id)));
            }
            if self.label == 0 && gt.contains(&1) {
                return Err(Error::Data(format!("{}: normal video has abnormal frames", self.id)));
            }
        }
        Ok(())
    }
}

/// Checks that a dataset holds at least one abnormal and one normal video.
pub fn ensure_both_classes(videos: &[VideoRecord]) -> Result<()> {
    let abnormal = videos.iter().filter(|v| v.is_abnormal()).count();
    if abnormal == 0 || abnormal == videos.len() {
        return Err(Error::Data(format!(
            "training needs both classes: {abnormal} abnormal and {} normal videos",
            videos.len() - abnormal
        )));
    }
    Ok(())
}
