use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, NodeId, Tensor};
use crate::{Error, Result};

/// Scores are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// `K` subset scores of one abnormal and one normal video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagPair {
    pub abnormal: Vec<f64>,
    pub normal: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MilBatch {
    pub pairs: Vec<BagPair>,
}

impl MilBatch {
    /// Returns the common bag size `K`.
    pub fn validate(&self) -> Result<usize> {
        let Some(first) = self.pairs.first() else {
            return Err(Error::Data("MIL batch has no bag pairs".into()));
        };
        let k = first.abnormal.len();
        if k == 0 {
            return Err(Error::Data("MIL bags must hold at least one subset score".into()));
        }
        for (i, p) in self.pairs.iter().enumerate() {
            if p.abnormal.len() != k || p.normal.len() != k {
                return Err(Error::Data(format!(
                    "pair {i}: bag sizes {} / {} differ from K = {k}",
                    p.abnormal.len(),
                    p.normal.len()
                )));
            }
        }
        Ok(k)
    }
}

fn max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean over bag pairs of `(τ − max s^a + max s^n)_+ + (α/K) Σ s^a`.
pub fn mil_ranking_loss(batch: &MilBatch, tau: f64, alpha: f64) -> Result<f64> {
    let k = batch.validate()?;
    let total: f64 = batch
        .pairs
        .iter()
        .map(|p| {
            let hinge = (tau - max(&p.abnormal) + max(&p.normal)).max(0.0);
            hinge + alpha / k as f64 * p.abnormal.iter().sum::<f64>()
        })
        .sum();
    Ok(total / batch.pairs.len() as f64)
}

/// Binary cross-entropy of a score against a soft target.
pub fn cross_entropy(s: f64, target: f64) -> f64 {
    let s = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -target * s.ln() - (1.0 - target) * (1.0 - s).ln()
}

/// Mean cross-entropy over `(score, target)` pairs; 0 when there are none.
pub fn cross_entropy_loss(terms: &[(f64, f64)]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.iter().map(|&(s, y)| cross_entropy(s, y)).sum::<f64>() / terms.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mil: f64,
    pub ce: f64,
    pub total: f64,
}

/// `L_MIL + β · L_CE`. With no labeled terms the CE part is 0 and the
/// total equals the MIL loss.
pub fn combined_loss(batch: &MilBatch, ce_terms: &[(f64, f64)], tau: f64, alpha: f64, beta: f64) -> Result<LossBreakdown> {
    let mil = mil_ranking_loss(batch, tau, alpha)?;
    let ce = cross_entropy_loss(ce_terms);
    Ok(LossBreakdown {
        mil,
        ce,
        total: mil + beta * ce,
    })
}

/// MIL ranking loss of one bag pair from `[K]` subset-score nodes.
pub fn mil_pair_node(g: &mut Graph, abnormal: NodeId, normal: NodeId, tau: f64, alpha: f64) -> Result<NodeId> {
    let k = *g.dims(abnormal).last().unwrap_or(&0);
    if g.dims(abnormal) != [k] || g.dims(normal) != [k] || k == 0 {
        return Err(Error::Data(format!(
            "bag pair shapes {:?} / {:?} are not equal [K]",
            g.dims(abnormal),
            g.dims(normal)
        )));
    }
    let max_a = g.max_last(abnormal)?;
    let max_n = g.max_last(normal)?;
    let margin = g.sub(max_n, max_a)?;
    let margin = g.shift(margin, tau)?;
    let hinge = g.relu(margin)?;
    let sparsity = g.sum(abnormal)?;
    let sparsity = g.scale(sparsity, alpha / k as f64)?;
    Ok(g.add(hinge, sparsity)?)
}

/// Summed cross-entropy of `[n]` scores where score `j` is weighted
/// against targets totalling `positive[j]` and `negative[j]`
/// (a window covering `C` clips with labels `ỹ_c` contributes
/// `Σ ỹ_c` and `C − Σ ỹ_c`).
pub fn cross_entropy_sum_node(g: &mut Graph, scores: NodeId, positive: &[f64], negative: &[f64]) -> Result<NodeId> {
    let n = positive.len();
    if g.dims(scores) != [n] || negative.len() != n {
        return Err(Error::Data(format!(
            "cross-entropy weights for {n} scores do not match {:?}",
            g.dims(scores)
        )));
    }
    let s = g.clamp(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_s = g.ln(s)?;
    let one_minus = g.scale(s, -1.0)?;
    let one_minus = g.shift(one_minus, 1.0)?;
    let log_1s = g.ln(one_minus)?;
    let wp = g.constant(Tensor::vector(positive.to_vec()));
    let wn = g.constant(Tensor::vector(negative.to_vec()));
    let a = g.mul(log_s, wp)?;
    let b = g.mul(log_1s, wn)?;
    let both = g.add(a, b)?;
    let total = g.sum(both)?;
    Ok(g.scale(total, -1.0)?)
}
