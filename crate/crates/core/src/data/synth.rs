//! Synthetic tubelet features with planted anomalies.
//!
//! Each tubelet channel follows a stationary AR(1) process around a
//! per-video scene mean with unit marginal variance. Abnormal videos get one
//! or two anomaly spans: a contiguous clip range crossed with a contiguous
//! block of tubelets whose features are shifted along a dataset-wide unit
//! direction by `shift_magnitude`. Features are quantized to f32 so a
//! dataset written to disk and read back is identical to the in-memory one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AnomalySpan, FeatureVolume, GridShape, VideoRecord};
use crate::seed::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_videos: usize,
    pub test_videos: usize,
    /// Fraction of each split that is abnormal.
    pub abnormal_fraction: f64,
    /// Inclusive range of clips per video.
    pub clips: [usize; 2],
    pub d: usize,
    pub grid: GridShape,
    pub frames_per_clip: usize,
    /// Inclusive duration range, in clips, of short anomalies.
    pub short_duration: [usize; 2],
    /// Inclusive duration range, in clips, of long anomalies.
    pub long_duration: [usize; 2],
    /// Fraction of abnormal videos whose spans are long.
    pub long_fraction: f64,
    pub spans_per_video: [usize; 2],
    /// Inclusive side length range, in tubelets, of the anomalous block.
    pub spatial_extent: [usize; 2],
    pub shift_magnitude: f64,
    pub ar_coefficient: f64,
    /// Standard deviation of the per-video, per-tubelet scene mean.
    pub scene_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_videos: 40,
            test_videos: 20,
            abnormal_fraction: 0.5,
            clips: [30, 60],
            d: 32,
            grid: GridShape::new(2, 2),
            frames_per_clip: 16,
            short_duration: [1, 2],
            long_duration: [6, 10],
            long_fraction: 0.5,
            spans_per_video: [1, 2],
            spatial_extent: [1, 1],
            shift_magnitude: 1.5,
            ar_coefficient: 0.8,
            scene_scale: 1.0,
            seed: 0,
        }
    }
}

fn check_range(field: &str, r: [usize; 2], min: usize) -> Result<()> {
    if r[0] < min || r[0] > r[1] {
        return Err(Error::config(field, format!("range {r:?} must satisfy {min} <= lo <= hi")));
    }
    Ok(())
}

fn check_fraction(field: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::config(field, format!("{v} is not in [0, 1]")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(Error::config("grid", format!("extents must be positive, got {}", self.grid)));
        }
        if self.d == 0 {
            return Err(Error::config("d", "must be positive"));
        }
        if self.frames_per_clip == 0 {
            return Err(Error::config("frames_per_clip", "must be positive"));
        }
        check_range("clips", self.clips, 1)?;
        check_range("short_duration", self.short_duration, 1)?;
        check_range("long_duration", self.long_duration, 1)?;
        check_range("spans_per_video", self.spans_per_video, 1)?;
        check_range("spatial_extent", self.spatial_extent, 1)?;
        check_fraction("abnormal_fraction", self.abnormal_fraction)?;
        check_fraction("long_fraction", self.long_fraction)?;
        let longest = self.short_duration[1].max(self.long_duration[1]);
        if longest > self.clips[0] {
            return Err(Error::config(
                "long_duration",
                format!("anomalies of up to {longest} clips do not fit videos of {} clips", self.clips[0]),
            ));
        }
        if self.spatial_extent[1] > self.grid.rows.min(self.grid.cols) {
            return Err(Error::config(
                "spatial_extent",
                format!("block side {} exceeds grid {}", self.spatial_extent[1], self.grid),
            ));
        }
        if !(self.shift_magnitude >= 0.0 && self.shift_magnitude.is_finite()) {
            return Err(Error::config("shift_magnitude", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return Err(Error::config("ar_coefficient", "must lie in [0, 1)"));
        }
        if !(self.scene_scale >= 0.0 && self.scene_scale.is_finite()) {
            return Err(Error::config("scene_scale", "must be finite and non-negative"));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Clone, Copy)]
enum AnomalyKind {
    Normal,
    Short,
    Long,
}

fn place_spans(cfg: &SynthConfig, kind: AnomalyKind, num_clips: usize, rng: &mut ChaCha8Rng) -> Vec<AnomalySpan> {
    let durations = match kind {
        AnomalyKind::Normal => return Vec::new(),
        AnomalyKind::Short => cfg.short_duration,
        AnomalyKind::Long => cfg.long_duration,
    };
    let wanted = rng.random_range(cfg.spans_per_video[0]..=cfg.spans_per_video[1]);
    let mut spans: Vec<AnomalySpan> = Vec::new();
    let mut attempts = 0;
    while spans.len() < wanted && attempts < 32 {
        attempts += 1;
        let len = rng.random_range(durations[0]..=durations[1]);
        let start = rng.random_range(0..=num_clips - len);
        let side_h = rng.random_range(cfg.spatial_extent[0]..=cfg.spatial_extent[1]);
        let side_w = rng.random_range(cfg.spatial_extent[0]..=cfg.spatial_extent[1]);
        let row = rng.random_range(0..=cfg.grid.rows - side_h);
        let col = rng.random_range(0..=cfg.grid.cols - side_w);
        // keep one clip of background between spans
        let overlaps = spans
            .iter()
            .any(|s| start < s.clip_end + 1 && s.clip_start < start + len + 1);
        if overlaps {
            continue;
        }
        spans.push(AnomalySpan {
            clip_start: start,
            clip_end: start + len,
            rows: row..row + side_h,
            cols: col..col + side_w,
        });
    }
    spans.sort_by_key(|s| s.clip_start);
    spans
}

fn generate_video(
    cfg: &SynthConfig,
    id: String,
    kind: AnomalyKind,
    direction: &[f64],
    seed: u64,
) -> Result<VideoRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_clips = rng.random_range(cfg.clips[0]..=cfg.clips[1]);
    let d = cfg.d;
    let tubelets = cfg.grid.tubelets();
    let phi = cfg.ar_coefficient;
    let innovation = (1.0 - phi * phi).sqrt();

    let means: Vec<f64> = (0..tubelets * d).map(|_| cfg.scene_scale * normal(&mut rng)).collect();
    let mut state: Vec<f64> = (0..tubelets * d).map(|_| normal(&mut rng)).collect();
    let spans = place_spans(cfg, kind, num_clips, &mut rng);

    let mut values = Vec::with_capacity(num_clips * tubelets * d);
    for clip in 0..num_clips {
        if clip > 0 {
            for s in state.iter_mut() {
                *s = phi * *s + innovation * normal(&mut rng);
            }
        }
        for row in 0..cfg.grid.rows {
            for col in 0..cfg.grid.cols {
                let t = row * cfg.grid.cols + col;
                let shifted = spans.iter().any(|s| s.contains(clip, row, col));
                for c in 0..d {
                    let mut v = means[t * d + c] + state[t * d + c];
                    if shifted {
                        v += cfg.shift_magnitude * direction[c];
                    }
                    values.push(v as f32 as f64);
                }
            }
        }
    }

    let label = u8::from(!spans.is_empty());
    let mut frame_gt = vec![0u8; num_clips * cfg.frames_per_clip];
    for s in &spans {
        frame_gt[s.clip_start * cfg.frames_per_clip..s.clip_end * cfg.frames_per_clip].fill(1);
    }
    let record = VideoRecord {
        id,
        features: FeatureVolume::new(num_clips, cfg.grid, d, values)?,
        label,
        frames_per_clip: cfg.frames_per_clip,
        frame_gt: Some(frame_gt),
        anomaly_spans: spans,
    };
    record.validate()?;
    Ok(record)
}

fn split_kinds(cfg: &SynthConfig, count: usize, rng: &mut ChaCha8Rng) -> Vec<AnomalyKind> {
    let abnormal = (cfg.abnormal_fraction * count as f64).round() as usize;
    let long = (cfg.long_fraction * abnormal as f64).round() as usize;
    let mut kinds: Vec<AnomalyKind> = (0..count)
        .map(|i| match i {
            i if i < long => AnomalyKind::Long,
            i if i < abnormal => AnomalyKind::Short,
            _ => AnomalyKind::Normal,
        })
        .collect();
    kinds.shuffle(rng);
    kinds
}

/// Returns `(train, test)` splits. Deterministic in `cfg.seed`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<(Vec<VideoRecord>, Vec<VideoRecord>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let direction = unit_direction(cfg.d, &mut rng);
    let mut splits = Vec::with_capacity(2);
    for (split, (name, count)) in [("train", cfg.train_videos), ("test", cfg.test_videos)]
        .into_iter()
        .enumerate()
    {
        let kinds = split_kinds(cfg, count, &mut rng);
        let videos = kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                let seed = derive_seed(cfg.seed, &[1, split as u64, i as u64]);
                generate_video(cfg, format!("{name}_{i:03}"), kind, &direction, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        splits.push(videos);
    }
    let test = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_videos: 8,
            test_videos: 4,
            clips: [12, 16],
            long_duration: [6, 10],
            d: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn no_abnormal_videos() {
        let cfg = SynthConfig {
            abnormal_fraction: 0.0,
            ..small()
        };
        let (train, test) = generate_dataset(&cfg).unwrap();
        for v in train.iter().chain(&test) {
            assert_eq!(v.label, 0);
            assert!(v.frame_gt.as_ref().unwrap().iter().all(|&g| g == 0));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SynthConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a.0[0].features, c.0[0].features);
    }

    #[test]
    fn spans_and_ground_truth_agree() {
        let (train, test) = generate_dataset(&small()).unwrap();
        let abnormal = train.iter().chain(&test).filter(|v| v.is_abnormal()).count();
        assert_eq!(abnormal, 6);
        for v in train.iter().chain(&test) {
            assert_eq!(v.is_abnormal(), !v.anomaly_spans.is_empty());
            let gt = v.frame_gt.as_ref().unwrap();
            for clip in 0..v.num_clips() {
                let inside = v.anomaly_spans.iter().any(|s| (s.clip_start..s.clip_end).contains(&clip));
                for f in 0..v.frames_per_clip {
                    assert_eq!(gt[clip * v.frames_per_clip + f] == 1, inside);
                }
            }
        }
    }

    #[test]
    fn rejects_anomaly_longer_than_video() {
        let cfg = SynthConfig {
            clips: [5, 8],
            ..small()
        };
        assert!(matches!(generate_dataset(&cfg), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn rejects_empty_grid() {
        let cfg = SynthConfig {
            grid: GridShape::new(0, 0),
            ..small()
        };
        let err = generate_dataset(&cfg).unwrap_err();
        assert!(err.to_string().contains("grid"));
    }
}
