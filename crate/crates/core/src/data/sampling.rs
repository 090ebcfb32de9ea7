use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoRecord;
use crate::{Error, Result};

/// A run of `span` consecutive clips starting at `start` in one video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSample {
    pub video_id: String,
    pub start: usize,
    pub span: usize,
}

impl SubsetSample {
    pub fn end(&self) -> usize {
        self.start + self.span
    }
}

/// Draws `k` subset starts uniformly without replacement from
/// `[0, num_clips − span]`. When fewer than `k` distinct starts exist, every
/// start is used once and the remainder is drawn with replacement.
/// Samples are returned sorted by start.
pub fn sample_subsets(video: &VideoRecord, k: usize, span: usize, seed: u64) -> Result<Vec<SubsetSample>> {
    let n = video.num_clips();
    if k == 0 {
        return Err(Error::config("K", "must be at least 1"));
    }
    if span == 0 || span > n {
        return Err(Error::Data(format!(
            "{}: subset span {span} exceeds video length {n}",
            video.id
        )));
    }
    let candidates = n - span + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<usize> = if candidates >= k {
        index::sample(&mut rng, candidates, k).into_vec()
    } else {
        let mut all: Vec<usize> = (0..candidates).collect();
        all.extend((candidates..k).map(|_| rng.random_range(0..candidates)));
        all
    };
    starts.sort_unstable();
    Ok(starts
        .into_iter()
        .map(|start| SubsetSample {
            video_id: video.id.clone(),
            start,
            span,
        })
        .collect())
}

/// Every window of `clips` consecutive clips, stride 1, in order.
pub fn enumerate_inference_windows(video: &VideoRecord, clips: usize) -> Result<Vec<SubsetSample>> {
    let n = video.num_clips();
    if clips == 0 || clips > n {
        return Err(Error::Data(format!(
            "{}: video has {n} clips, shorter than the {clips}-clip window",
            video.id
        )));
    }
    Ok((0..=n - clips)
        .map(|start| SubsetSample {
            video_id: video.id.clone(),
            start,
            span: clips,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureVolume, GridShape};

    fn video(clips: usize) -> VideoRecord {
        VideoRecord {
            id: "v".into(),
            features: FeatureVolume::new(clips, GridShape::new(1, 1), 2, vec![0.0; clips * 2]).unwrap(),
            label: 0,
            frames_per_clip: 4,
            frame_gt: None,
            anomaly_spans: Vec::new(),
        }
    }

    #[test]
    fn forced_start_when_span_fills_video() {
        let s = sample_subsets(&video(5), 4, 5, 1).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|x| x.start == 0));
    }

    #[test]
    fn distinct_starts_when_enough_candidates() {
        let s = sample_subsets(&video(10), 8, 3, 7).unwrap();
        let mut starts: Vec<usize> = s.iter().map(|x| x.start).collect();
        starts.dedup();
        assert_eq!(starts.len(), 8);
        assert!(starts.iter().all(|&x| x <= 7));
    }

    #[test]
    fn fills_with_replacement() {
        let s = sample_subsets(&video(4), 6, 3, 3).unwrap();
        assert_eq!(s.len(), 6);
        for start in 0..2 {
            assert!(s.iter().any(|x| x.start == start));
        }
        assert!(s.iter().all(|x| x.end() <= 4));
    }

    #[test]
    fn span_longer_than_video_is_rejected() {
        assert!(sample_subsets(&video(2), 4, 3, 0).is_err());
    }

    #[test]
    fn inference_windows() {
        let starts = |n, c| -> Vec<usize> {
            enumerate_inference_windows(&video(n), c).unwrap().iter().map(|w| w.start).collect()
        };
        assert_eq!(starts(5, 3), vec![0, 1, 2]);
        assert_eq!(starts(4, 1), vec![0, 1, 2, 3]);
        assert_eq!(starts(3, 3), vec![0]);
        assert!(enumerate_inference_windows(&video(1), 3).is_err());
    }
}
