use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hyperparameters of a co-teaching run. Omitted JSON keys take the
/// defaults below; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Ranking margin `τ`.
    pub tau: f64,
    /// Sparsity weight `α`.
    pub alpha: f64,
    /// Cross-entropy weight `β`.
    pub beta: f64,
    /// Pseudo-label threshold `μ`.
    pub mu: f64,
    /// Co-teaching rounds `R`; each round trains STN then LTN.
    pub rounds: usize,
    /// Subsets sampled per video and epoch (`K`).
    pub subsets: usize,
    /// Clips per STN window.
    pub stn_clips: usize,
    /// Clips averaged per STN subset (`T`).
    pub stn_subset_clips: usize,
    /// Clips per LTN window (`C`).
    pub ltn_clips: usize,
    pub layers: usize,
    pub heads: usize,
    /// Videos per optimizer step, half abnormal and half normal.
    pub batch_size: usize,
    pub lr_transformer: f64,
    pub lr_regressor: f64,
    /// Epochs per training pass.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            alpha: 0.01,
            beta: 0.8,
            mu: 0.85,
            rounds: 4,
            subsets: 16,
            stn_clips: 1,
            stn_subset_clips: 7,
            ltn_clips: 3,
            layers: 3,
            heads: 8,
            batch_size: 40,
            lr_transformer: 1e-4,
            lr_regressor: 1e-2,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Bag pairs per optimizer step.
    pub fn pairs_per_batch(&self) -> usize {
        self.batch_size / 2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("lr_transformer", self.lr_transformer),
            ("lr_regressor", self.lr_regressor),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        for (field, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be nonnegative, got {v}")));
            }
        }
        // μ = 1 is accepted: it disables pseudo labels and is reported as degenerate.
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::config("mu", format!("must lie in (0, 1], got {}", self.mu)));
        }
        let counts = [
            ("rounds", self.rounds),
            ("subsets", self.subsets),
            ("stn_clips", self.stn_clips),
            ("stn_subset_clips", self.stn_subset_clips),
            ("ltn_clips", self.ltn_clips),
            ("layers", self.layers),
            ("heads", self.heads),
            ("epochs", self.epochs),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.stn_subset_clips < self.stn_clips {
            return Err(Error::config(
                "stn_subset_clips",
                format!("{} is shorter than the {}-clip STN window", self.stn_subset_clips, self.stn_clips),
            ));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::config(
                "batch_size",
                format!("must be a positive even number, got {}", self.batch_size),
            ));
        }
        Ok(())
    }
}
