use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::network::{dataset_clip_scores, Network};
use crate::data::VideoRecord;
use crate::{Error, Result};

/// Soft clip labels: `s` when `s > μ` in an abnormal video, otherwise 0.
pub fn pseudo_label(score: f64, video_label: u8, mu: f64) -> f64 {
    if video_label == 1 && score > mu {
        score
    } else {
        0.0
    }
}

/// Per-video, per-clip pseudo labels produced by one network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelStore {
    pub mu: f64,
    labels: BTreeMap<String, Vec<f64>>,
}

impl PseudoLabelStore {
    pub fn get(&self, video_id: &str) -> Option<&[f64]> {
        self.labels.get(video_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.labels.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Clips with a nonzero label.
    pub fn positives(&self) -> usize {
        self.labels.values().flatten().filter(|&&y| y > 0.0).count()
    }

    /// True when every label is zero, so the CE term can only push scores
    /// down.
    pub fn is_degenerate(&self) -> bool {
        self.positives() == 0
    }
}

/// Applies [`pseudo_label`] to every clip score. `entries` yields
/// `(video id, video label, clip scores)`.
pub fn generate_pseudo_labels<'a, I>(entries: I, mu: f64) -> Result<PseudoLabelStore>
where
    I: IntoIterator<Item = (&'a str, u8, &'a [f64])>,
{
    let mut labels = BTreeMap::new();
    for (id, y, scores) in entries {
        if y > 1 {
            return Err(Error::Data(format!("{id}: video label {y} is not 0/1")));
        }
        let l: Vec<f64> = scores.iter().map(|&s| pseudo_label(s, y, mu)).collect();
        if labels.insert(id.to_string(), l).is_some() {
            return Err(Error::Data(format!("duplicate video id {id}")));
        }
    }
    Ok(PseudoLabelStore { mu, labels })
}

/// Scores every clip of `videos` with `network` and thresholds at `mu`.
pub fn label_videos(network: &Network, videos: &[VideoRecord], mu: f64) -> Result<PseudoLabelStore> {
    let scores = dataset_clip_scores(network, videos)?;
    generate_pseudo_labels(
        videos.iter().zip(&scores).map(|(v, s)| (v.id.as_str(), v.label, s.as_slice())),
        mu,
    )
}
