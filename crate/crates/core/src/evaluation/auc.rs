use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
    /// `(FPR, TPR)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
}

impl RocResult {
    /// Trapezoidal area under `points`.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

/// Each frame inherits its clip's score.
pub fn frame_scores(clip_scores: &[f64], frames_per_clip: usize) -> Vec<f64> {
    clip_scores
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, frames_per_clip))
        .collect()
}

/// ROC curve and AUC by sorting scores in decreasing order and sweeping the
/// threshold one tie group at a time.
///
/// The AUC is the Mann–Whitney statistic: the fraction of (positive,
/// negative) pairs ranked correctly, ties counting one half. Tie groups
/// become single diagonal ROC segments, so the trapezoid rule yields the
/// same value.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Data(format!("score {i} is not finite")));
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::Data(format!("label {i} is {}, expected 0 or 1", labels[i])));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data(format!(
            "ROC AUC needs both classes, got {positives} positive and {negatives} negative frames"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the number of misranked pairs; tied pairs count once.
    let mut doubled = 0u128;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        doubled += (gp as u128) * (2 * fp as u128 + gn as u128);
        tp += gp;
        fp += gn;
        points.push((fp as f64 / n, tp as f64 / p));
    }
    let auc = 1.0 - doubled as f64 / (2.0 * p * n);
    Ok(RocResult {
        auc,
        positives,
        negatives,
        points,
    })
}
