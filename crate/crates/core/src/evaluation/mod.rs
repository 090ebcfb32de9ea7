//! Frame-level ROC AUC, score-curve CSVs and attention rollout maps.

mod auc;
mod curve;
mod rollout;

pub use auc::{frame_scores, roc_auc, RocResult};
pub use curve::{decode_curve, encode_curve, export_curve, read_curve, ScoreCurve};
pub use rollout::{
    attention_rollout, encode_attention_map, export_attention_map, rollout_matrix, RelevanceMap,
};
