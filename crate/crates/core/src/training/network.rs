use std::fmt;

use serde::{Deserialize, Serialize};

use super::TrainingConfig;
use crate::data::{GridShape, SubsetSample, VideoRecord};
use crate::evaluation::{frame_scores, roc_auc};
use crate::model::{init_params, window_tags, ModelConfig, ModelParams, PositionTag};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::{parallel, Error, Result};

/// Windows scored per forward pass at inference time.
const WINDOW_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    /// Short-term network: single-clip windows averaged over a subset.
    Stn,
    /// Long-term network: one window of consecutive clips per subset.
    Ltn,
}

impl NetworkKind {
    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::Stn => "stn",
            NetworkKind::Ltn => "ltn",
        }
    }

    pub fn other(self) -> Self {
        match self {
            NetworkKind::Stn => NetworkKind::Ltn,
            NetworkKind::Ltn => NetworkKind::Stn,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stn" => Ok(NetworkKind::Stn),
            "ltn" => Ok(NetworkKind::Ltn),
            other => Err(Error::config("network", format!("expected \"stn\" or \"ltn\", got {other:?}"))),
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A transformer scorer plus the subset length it is trained on.
///
/// A subset of `subset_clips` consecutive clips is scored as the mean of
/// its stride-1 windows: `T` single-clip windows for the STN, exactly one
/// `C`-clip window for the LTN.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub kind: NetworkKind,
    pub model: ModelParams,
    pub subset_clips: usize,
}

impl Network {
    pub fn new(kind: NetworkKind, d: usize, grid: GridShape, cfg: &TrainingConfig, seed: u64) -> Result<Self> {
        let (clips, subset_clips) = match kind {
            NetworkKind::Stn => (cfg.stn_clips, cfg.stn_subset_clips),
            NetworkKind::Ltn => (cfg.ltn_clips, cfg.ltn_clips),
        };
        let config = ModelConfig {
            d,
            clips,
            grid,
            layers: cfg.layers,
            heads: cfg.heads,
        };
        Ok(Self {
            kind,
            model: init_params(seed, config)?,
            subset_clips,
        })
    }

    pub fn window_clips(&self) -> usize {
        self.model.config.clips
    }

    pub fn windows_per_subset(&self) -> usize {
        self.subset_clips - self.window_clips() + 1
    }

    pub fn tags(&self) -> Vec<PositionTag> {
        window_tags(self.window_clips(), self.model.config.grid)
    }

    pub fn check_compatible(&self, video: &VideoRecord) -> Result<()> {
        let c = &self.model.config;
        if video.features.d() != c.d {
            return Err(Error::incompatible("d", format!("{} ({})", video.features.d(), video.id), c.d));
        }
        if video.features.grid() != c.grid {
            return Err(Error::incompatible("grid", format!("{} ({})", video.features.grid(), video.id), c.grid));
        }
        if video.num_clips() < self.window_clips() {
            return Err(Error::Data(format!(
                "{}: video has {} clips, shorter than the {}-clip {} window",
                video.id,
                video.num_clips(),
                self.window_clips(),
                self.kind
            )));
        }
        Ok(())
    }

    /// Stacks the windows starting at `starts` into `[B, C·N_t, d]`.
    pub fn window_batch(&self, video: &VideoRecord, starts: &[usize]) -> Result<Tensor> {
        let c = &self.model.config;
        let per = c.clips * c.grid.tubelets() * c.d;
        let mut data = Vec::with_capacity(starts.len() * per);
        for &s in starts {
            data.extend_from_slice(video.features.clips(s, c.clips)?);
        }
        Ok(Tensor::new(vec![starts.len(), c.clips * c.grid.tubelets(), c.d], data)?)
    }

    /// Adds the windows of `samples` to `g` and returns `[K]` subset scores
    /// plus the `[K·W]` window scores they average.
    pub fn subset_scores_node(
        &self,
        g: &mut Graph,
        video: &VideoRecord,
        samples: &[SubsetSample],
    ) -> Result<(NodeId, NodeId)> {
        let w = self.windows_per_subset();
        let mut starts = Vec::with_capacity(samples.len() * w);
        for s in samples {
            if s.span != self.subset_clips {
                return Err(Error::Data(format!(
                    "{}: subset spans {} clips, {} expects {}",
                    video.id, s.span, self.kind, self.subset_clips
                )));
            }
            starts.extend(s.start..s.start + w);
        }
        // Overlapping subsets share windows; each distinct window is scored once.
        let mut unique = starts.clone();
        unique.sort_unstable();
        unique.dedup();
        let index: Vec<Option<usize>> = starts
            .iter()
            .map(|s| unique.binary_search(s).ok())
            .collect();
        let batch = self.window_batch(video, &unique)?;
        let out = self.model.forward(g, batch, &self.tags())?;
        let table = g.reshape(out.scores, &[1, unique.len()])?;
        let windows = g.gather(table, &index)?;
        let grouped = g.reshape(windows, &[samples.len(), w])?;
        let windows = g.reshape(windows, &[starts.len()])?;
        Ok((g.mean_last(grouped)?, windows))
    }

    /// Scores the windows starting at `starts`, in order.
    pub fn score_windows(&self, video: &VideoRecord, starts: &[usize]) -> Result<Vec<f64>> {
        self.check_compatible(video)?;
        let tags = self.tags();
        let mut scores = Vec::with_capacity(starts.len());
        for chunk in starts.chunks(WINDOW_CHUNK) {
            let mut g = Graph::new();
            let out = self.model.forward(&mut g, self.window_batch(video, chunk)?, &tags)?;
            scores.extend_from_slice(g.value(out.scores).data());
        }
        Ok(scores)
    }

    /// Scores of all stride-1 windows of the video.
    pub fn window_scores(&self, video: &VideoRecord) -> Result<Vec<f64>> {
        self.check_compatible(video)?;
        let starts: Vec<usize> = (0..=video.num_clips() - self.window_clips()).collect();
        self.score_windows(video, &starts)
    }

    pub fn subset_score(&self, video: &VideoRecord, sample: &SubsetSample) -> Result<f64> {
        if sample.span != self.subset_clips || sample.end() > video.num_clips() {
            return Err(Error::Data(format!(
                "{}: subset [{}, {}) does not fit a {}-clip {} subset of a {}-clip video",
                video.id,
                sample.start,
                sample.end(),
                self.subset_clips,
                self.kind,
                video.num_clips()
            )));
        }
        let starts: Vec<usize> = (sample.start..sample.start + self.windows_per_subset()).collect();
        let scores = self.score_windows(video, &starts)?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// One score per clip: the mean over every stride-1 window covering it.
    pub fn clip_scores(&self, video: &VideoRecord) -> Result<Vec<f64>> {
        Ok(coverage_average(&self.window_scores(video)?, self.window_clips()))
    }
}

/// Turns stride-1 scores of `window`-clip windows into per-clip scores by
/// averaging all windows that cover each clip.
pub fn coverage_average(window_scores: &[f64], window: usize) -> Vec<f64> {
    if window_scores.is_empty() {
        return Vec::new();
    }
    let clips = window_scores.len() + window - 1;
    (0..clips)
        .map(|i| {
            let first = i.saturating_sub(window - 1);
            let last = i.min(window_scores.len() - 1);
            let covering = &window_scores[first..=last];
            covering.iter().sum::<f64>() / covering.len() as f64
        })
        .collect()
}

pub fn subset_score(network: &Network, video: &VideoRecord, sample: &SubsetSample) -> Result<f64> {
    network.subset_score(video, sample)
}

pub fn clip_scores(network: &Network, video: &VideoRecord) -> Result<Vec<f64>> {
    network.clip_scores(video)
}

/// Clip scores of every video, computed across `LSTC_THREADS` workers.
pub fn dataset_clip_scores(network: &Network, videos: &[VideoRecord]) -> Result<Vec<Vec<f64>>> {
    parallel::map(videos, |v| network.clip_scores(v)).into_iter().collect()
}

/// Video-level AUC from weak labels only: each video scores its maximum
/// clip score.
pub fn video_auc(network: &Network, videos: &[VideoRecord]) -> Result<f64> {
    let scores = dataset_clip_scores(network, videos)?;
    let maxima: Vec<f64> = scores.iter().map(|s| s.iter().cloned().fold(f64::MIN, f64::max)).collect();
    let labels: Vec<u8> = videos.iter().map(|v| v.label).collect();
    Ok(roc_auc(&maxima, &labels)?.auc)
}

/// Frame-level AUC over the concatenated frames of all videos, or `None`
/// when any video lacks ground truth or only one class is present.
pub fn frame_auc(network: &Network, videos: &[VideoRecord]) -> Result<Option<f64>> {
    if videos.is_empty() || videos.iter().any(|v| v.frame_gt.is_none()) {
        return Ok(None);
    }
    let scores = dataset_clip_scores(network, videos)?;
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for (v, s) in videos.iter().zip(&scores) {
        frames.extend(frame_scores(s, v.frames_per_clip));
        labels.extend_from_slice(v.frame_gt.as_deref().unwrap_or_default());
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Ok(None);
    }
    Ok(Some(roc_auc(&frames, &labels)?.auc))
}
